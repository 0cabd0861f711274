// scratch: learning-rate sweep
use floorgraph::dataset::*;
use floorgraph::encoder::EncoderDims;
use floorgraph::graph::ViewId;
use floorgraph::trainer::*;

fn tiny_dataset(views: usize, seed: u64) -> FloorDataset {
    let extent = Extent::square(0.5);
    let field = generate_field(extent, 30000.0, seed).unwrap();
    let camera = CameraModel::default();
    let side = (views as f64).sqrt().ceil() as usize;
    let mut records = Vec::new();
    for i in 0..views {
        let x = 0.1 + 0.02 * (i % side) as f64;
        let y = 0.1 + 0.02 * (i / side) as f64;
        records.push(render_view(&field, ViewId(i as u64), Pose::new(x, y, 0.0), &camera, 0.0, seed).unwrap());
    }
    FloorDataset { camera, field_seed: seed, views: records }
}

fn main() {
    let dataset = tiny_dataset(50, 9);
    for lr in [1e-3, 1e-2, 0.05, 0.2, 0.5, 1.0] {
        let config = TrainConfig {
            max_epochs: 100,
            patience: 200,
            curriculum_enabled: false,
            batch_size: 16,
            batches_per_epoch: 2,
            node_count: 12,
            dims: EncoderDims { h0: 8, h1: 8, h2: 4 },
            val_pairs: 12,
            learning_rate: lr,
            ..TrainConfig::default()
        };
        match fit(&dataset, &config) {
            Ok(o) => {
                let first = o.log.epochs.first().unwrap().train_loss;
                let last = o.log.epochs.last().unwrap().train_loss;
                let minv = o.log.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
                println!("lr {lr:>6}: first {first:.4} last {last:.4} min_val {minv:.4}");
            }
            Err(e) => println!("lr {lr:>6}: error {e}"),
        }
    }
}
