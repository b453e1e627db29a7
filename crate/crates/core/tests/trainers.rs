use std::collections::HashMap;

use alphagan::data::{ring_of_gaussians, Dataset};
use alphagan::networks::Role;
use alphagan::trainers::{
    train, train_gan, Algorithm, MetricRow, TrainError, TrainObserver, TrainedModel, Trainer, TrainingConfig,
};

fn ring() -> Dataset {
    ring_of_gaussians(8, 2.0, 0.02, 512, 3).unwrap()
}

fn config(alg: Algorithm, iters: usize) -> TrainingConfig {
    let mut c = TrainingConfig::new(alg);
    c.max_iter = iters;
    c.eval_every = 1;
    c.batch_size = 16;
    c.latent_dim = 2;
    c.seed = Some(9);
    c
}

fn fingerprints(m: &TrainedModel) -> HashMap<Role, u64> {
    m.networks.iter().map(|n| (n.role(), n.fingerprint())).collect()
}

/// Counts updates per network and checks that only the targets changed.
struct ScheduleProbe {
    last: HashMap<Role, u64>,
    updates: HashMap<Role, usize>,
    violations: Vec<String>,
}

impl ScheduleProbe {
    fn new(m: &TrainedModel) -> Self {
        Self {
            last: fingerprints(m),
            updates: HashMap::new(),
            violations: Vec::new(),
        }
    }
}

impl TrainObserver for ScheduleProbe {
    fn after_update(&mut self, _iteration: usize, updated: &[Role], model: &TrainedModel) {
        let now = fingerprints(model);
        for (role, fp) in &now {
            let changed = self.last[role] != *fp;
            if updated.contains(role) {
                *self.updates.entry(*role).or_default() += 1;
                if !changed {
                    self.violations.push(format!("{role} targeted but unchanged"));
                }
            } else if changed {
                self.violations.push(format!("{role} changed while {updated:?} updated"));
            }
        }
        self.last = now;
    }
}

fn one_iteration(alg: Algorithm) -> (HashMap<Role, usize>, Vec<String>, HashMap<Role, u64>) {
    let data = ring();
    let c = config(alg, 1);
    let mut trainer = Trainer::new(&c, &data).unwrap();
    let mut probe = ScheduleProbe::new(trainer.model());
    trainer.iteration(&mut probe).unwrap();
    (probe.updates, probe.violations, fingerprints(trainer.model()))
}

#[test]
fn alpha_gan_schedule() {
    let (updates, violations, fp) = one_iteration(Algorithm::AlphaGan);
    assert!(violations.is_empty(), "{violations:?}");
    assert_eq!(updates[&Role::Encoder], 2);
    assert_eq!(updates[&Role::Generator], 2);
    assert_eq!(updates[&Role::Discriminator], 1);
    assert_eq!(updates[&Role::CodeDiscriminator], 1);
    for _ in 0..2 {
        assert_eq!(one_iteration(Algorithm::AlphaGan).2, fp);
    }
}

#[test]
fn baseline_schedules() {
    let (u, v, _) = one_iteration(Algorithm::WganGp);
    assert!(v.is_empty(), "{v:?}");
    assert_eq!((u[&Role::Critic], u[&Role::Generator]), (5, 1));

    let (u, v, _) = one_iteration(Algorithm::Gan);
    assert!(v.is_empty(), "{v:?}");
    assert_eq!((u[&Role::Discriminator], u[&Role::Generator]), (1, 2));

    let (u, v, _) = one_iteration(Algorithm::Age);
    assert!(v.is_empty(), "{v:?}");
    assert_eq!((u[&Role::Encoder], u[&Role::Generator]), (1, 2));

    let (u, _, _) = one_iteration(Algorithm::Vae);
    assert_eq!((u[&Role::Encoder], u[&Role::Generator]), (1, 1));
}

#[test]
fn zero_iterations_returns_initialisation() {
    let data = ring();
    for alg in Algorithm::ALL {
        let c = config(alg, 0);
        let out = train(&c, &data, &mut alphagan::trainers::NoObserver).unwrap();
        assert_eq!(out.model, TrainedModel::initialize(&c, data.kind).unwrap());
        assert_eq!(out.metrics.len(), 1);
    }
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let data = ring();
    for alg in Algorithm::ALL {
        let c = config(alg, 3).with_learning_rate(0.0);
        let out = train(&c, &data, &mut alphagan::trainers::NoObserver).unwrap();
        let init = TrainedModel::initialize(&c, data.kind).unwrap();
        assert_eq!(out.model.networks, init.networks, "{alg}");
    }
}

#[test]
fn runs_are_deterministic_and_log_every_eval() {
    let data = ring();
    let mut c = config(Algorithm::AlphaGan, 6);
    c.eval_every = 2;
    let run = || train(&c, &data, &mut alphagan::trainers::NoObserver).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.model, b.model);
    assert_eq!(alphagan::trainers::metrics_csv(&a.metrics), alphagan::trainers::metrics_csv(&b.metrics));
    assert_eq!(a.metrics.iter().map(|r| r.iter).collect::<Vec<_>>(), vec![0, 2, 4, 6]);
    assert!(a.metrics.iter().all(|r| r.wall_ms.is_none()));
}

#[test]
fn config_errors_name_the_key() {
    let data = ring();
    let mut c = config(Algorithm::Gan, 1);
    c.lr_generator = Some(-1e-3);
    let err = train(&c, &data, &mut alphagan::trainers::NoObserver).unwrap_err();
    assert!(matches!(&err, TrainError::Config { key, .. } if key == "lr_generator"), "{err}");

    let err = train_gan(&config(Algorithm::Vae, 1), &data, &mut alphagan::trainers::NoObserver).unwrap_err();
    assert!(matches!(err, TrainError::WrongAlgorithm { .. }));
}

struct Abort;

impl TrainObserver for Abort {
    fn on_eval(&mut self, _m: &TrainedModel, row: &MetricRow) -> Result<(), TrainError> {
        if row.iter >= 2 {
            return Err(TrainError::Observer("stop".into()));
        }
        Ok(())
    }
}

#[test]
fn observer_errors_stop_training() {
    let data = ring();
    let err = train(&config(Algorithm::Gan, 5), &data, &mut Abort).unwrap_err();
    assert!(matches!(err, TrainError::Observer(_)));
}

#[test]
fn exploding_learning_rate_aborts_with_last_good_model() {
    let data = ring();
    let c = config(Algorithm::Vae, 200).with_learning_rate(1e12);
    match train(&c, &data, &mut alphagan::trainers::NoObserver) {
        Err(TrainError::NonFinite { last_good, iteration, .. }) => {
            let good = last_good.expect("last good model attached");
            assert_eq!(good.iteration + 1, iteration);
            assert!(good.networks.iter().all(|n| n.tensors().iter().all(|t| t.is_finite())));
        }
        other => panic!("expected a numeric abort, got {:?}", other.map(|o| o.model.iteration)),
    }
}
