//! Small end-to-end run: generate trajectories, train both spectral
//! operators for a few epochs and compare autoregressive rollouts.

use leno::basis::Domain;
use leno::dataset::{desk_store_times, gen_dataset, DatasetSpec, Split};
use leno::harness::load_split;
use leno::harness::study::load_trajectories;
use leno::nn::TrainConfig;
use leno::operator::{relative_l2, rollout, train_onestep, BasisKind, OperatorConfig, OperatorModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> leno::Result<()> {
    let dir = std::env::temp_dir().join("leno-train-operator-example");
    let domain = Domain::rectangle(50.0, 50.0, 16, 16)?;
    let spec = DatasetSpec {
        domain: domain.clone(),
        regimes: vec![0.708, 0.85],
        train_per_regime: 4,
        test_per_regime: 1,
        noise: 0.05,
        seed: 11,
        store_times: desk_store_times(),
        dt: 0.1,
        multires: false,
    };
    let manifest = gen_dataset(&spec, &dir)?;
    println!("{} trajectories in {}", manifest.entries.len(), dir.display());
    let train = load_split(&dir, &domain, Split::Train)?;
    let test = load_split(&dir, &domain, Split::Test)?;
    let truth = load_trajectories(&dir, &domain, Split::Test)?;

    let tc = TrainConfig {
        lr: 2e-3,
        batch_size: 8,
        epochs: 5,
        seed: 0,
    };
    for basis in [BasisKind::NeumannCosine, BasisKind::FourierPadded] {
        let cfg = OperatorConfig {
            basis,
            width: 12,
            depth: 2,
            modes: [6, 6],
            residual: false,
        };
        let mut model = OperatorModel::<f64>::init(cfg, &domain, &mut ChaCha8Rng::seed_from_u64(1))?;
        let curve = train_onestep(&mut model, &train, &test, &tc, |_| {})?;
        let last = curve.rows.last().expect("at least one epoch");
        print!("{:<15} final train loss ({:.3e}, {:.3e})", basis.as_str(), last.train.u, last.train.v);
        for t in &truth {
            let pred = rollout(&model, t.field.snapshot(0), t.s_eq, t.field.times())?;
            let e = relative_l2(&pred, &t.field)?.per_channel;
            print!("  s={} rollout ({:.3e}, {:.3e})", t.s_eq, e[0], e[1]);
        }
        println!();
    }
    Ok(())
}
