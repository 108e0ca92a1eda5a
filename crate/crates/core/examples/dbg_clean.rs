use skelact::complete::{CompletionModel, SkeletonBank};
use skelact::dynamics::{DynamicsConfig, DynamicsModel, FusionParams};
use skelact::recognize::*;
use skelact::rng::Rng;
use skelact::skeleton::coco17_topology;
use skelact::synth::{gen_synth, SynthSpec};

fn main() {
    let spec = SynthSpec::new(4, 20, 16, 1).unwrap();
    let (train_set, val_set) = gen_synth(&spec).unwrap();
    let bank = SkeletonBank::new(train_set.clone(), 16).unwrap();
    let mut rng = Rng::new(0x111);
    let topo = coco17_topology();
    let mut models = PipelineModels {
        completion: CompletionModel::new(34, 2, 16, &mut rng),
        dynamics: DynamicsModel::new(&DynamicsConfig::default(), &mut rng),
        fusion: FusionParams::new(16, &mut rng),
        gcn: GcnModel::new(&topo, &[4, 32, 64], 4, &mut rng),
        prompt: PromptSet::from_bank(&bank, 1).unwrap(),
    };
    models.stabilize_for_training();
    let cfg = TrainConfig {
        corrupt_rate: 1.0 / 16.0, // nearly clean: one dropped frame
        epochs: 80,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let history = train(&mut models, &Dataset { train: train_set, val: val_set }, &cfg).unwrap();
    for (i, e) in history.epochs.iter().enumerate() {
        if i % 8 == 0 || i == history.epochs.len() - 1 {
            println!("epoch {i:3} loss {:8.4} val_top1 {:.3}", e.train_loss, e.val_top1);
        }
    }
}
