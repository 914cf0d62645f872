#![allow(dead_code)]

use epi_core::harness::{Method, RunConfig};

/// A seconds-scale stand-in for the benchmark: 3 tasks, small MLP.
pub fn small_config(method: Method) -> RunConfig {
    let mut c = RunConfig::default();
    c.method = method;
    c.suite.n_tasks = 3;
    c.suite.input_dim = 12;
    c.suite.output_dim = 3;
    c.model.widths = vec![10];
    c.steps_per_stage = 200;
    c.refresh_interval = 50;
    c.snapshot_every = 100;
    c.eval_size = 64;
    c.batch_size = 16;
    c.probe_steps = 50;
    c.p = 0.02;
    c.seeds = vec![11];
    c
}
