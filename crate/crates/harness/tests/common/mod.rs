use dynaug::config::{ExperimentConfig, ExperimentKind};

/// A config small enough to run end to end in a few seconds.
pub fn tiny(kind: ExperimentKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::quick(kind, 7);
    c.data.frames = 6;
    c.data.height = 8;
    c.data.width = 8;
    c.data.train_per_class = vec![2; c.data.classes];
    if kind == ExperimentKind::Imbalance {
        c.data.train_per_class = vec![2, 2, 4, 4];
    }
    c.data.test_per_class = 3;
    c.data.repetitions = 4;
    c.rankpool.max_iters = 200;
    c.gan.model.hidden = 8;
    c.gan.model.batch = 4;
    c.gan.model.iterations = 20;
    c.gan.pool_per_class = 6;
    c.classifier.hidden = 8;
    c.classifier.schedule.epochs = 6;
    c.classifier.schedule.decay_period = 3;
    c.selection.start = 2;
    c.selection.interval = 2;
    c.selection.extra = 1;
    c.selection.count = 3;
    c.gan_count_sweep.counts = vec![0, 3];
    c
}
