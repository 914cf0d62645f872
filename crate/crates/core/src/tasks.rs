//! Synthetic task suites with controllable gradient conflict, and the stage
//! orderings used by the sequential and mixed baselines.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EpiError, Result};
use crate::model::{argmax, Batch, LossKind, Targets};
use crate::rng::{Rng, SeedTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    LinearRegression,
    RotatedClassification,
}

impl TaskKind {
    pub fn loss(self) -> LossKind {
        match self {
            TaskKind::LinearRegression => LossKind::MeanSquaredError,
            TaskKind::RotatedClassification => LossKind::SoftmaxCrossEntropy,
        }
    }
}

/// One synthetic task: a linear teacher over Gaussian inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: usize,
    pub kind: TaskKind,
    /// Row-major `output_dim × input_dim`.
    pub teacher: Vec<f64>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub noise_std: f64,
    pub conflict_group: Option<usize>,
    /// Per-feature input standard deviations; `None` means unit scale.
    #[serde(default)]
    pub input_scales: Option<Vec<f64>>,
}

/// Parameters of a generated suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    pub n_tasks: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub kind: TaskKind,
    /// Pairs `(i, j)` whose teachers are made antiparallel.
    #[serde(default)]
    pub conflict_pairs: Vec<(usize, usize)>,
    #[serde(default)]
    pub noise_std: f64,
    /// Norm of the orthogonal perturbation relative to the teacher norm.
    #[serde(default = "default_orthogonal_noise")]
    pub orthogonal_noise: f64,
    #[serde(default)]
    pub input_scales: Option<Vec<f64>>,
}

fn default_orthogonal_noise() -> f64 {
    0.1
}

impl SuiteSpec {
    /// The default four-task regression benchmark.
    pub fn conflict_benchmark() -> Self {
        Self {
            n_tasks: 4,
            input_dim: 64,
            output_dim: 8,
            kind: TaskKind::LinearRegression,
            conflict_pairs: vec![(0, 1)],
            noise_std: 0.1,
            orthogonal_noise: default_orthogonal_noise(),
            input_scales: None,
        }
    }
}

/// Largest orthogonal noise that keeps the pair cosine at or below −0.9.
pub const MAX_ORTHOGONAL_NOISE: f64 = 0.484_322_104_837_852_5;

pub fn make_conflict_suite(rng: &mut Rng, suite: &SuiteSpec) -> Result<Vec<TaskSpec>> {
    let SuiteSpec {
        n_tasks: n,
        input_dim,
        output_dim,
        ..
    } = *suite;
    if n == 0 || input_dim == 0 || output_dim == 0 {
        return Err(EpiError::InvalidArgument("suite dims must be >= 1".into()));
    }
    if !(0.0..=MAX_ORTHOGONAL_NOISE).contains(&suite.orthogonal_noise) {
        return Err(EpiError::InvalidArgument(format!(
            "orthogonal noise {} would push the pair cosine above -0.9",
            suite.orthogonal_noise
        )));
    }
    if suite.noise_std < 0.0 {
        return Err(EpiError::InvalidArgument("noise std must be >= 0".into()));
    }
    if let Some(scales) = &suite.input_scales {
        EpiError::check_len(input_dim, scales.len())?;
        if scales.iter().any(|s| !(*s > 0.0)) {
            return Err(EpiError::InvalidArgument("input scales must be positive".into()));
        }
    }
    let mut partner: Vec<Option<(usize, usize)>> = vec![None; n];
    for (g, &(i, j)) in suite.conflict_pairs.iter().enumerate() {
        if i == j {
            return Err(EpiError::InvalidArgument(format!("conflict pair ({i}, {j}) repeats a task")));
        }
        if i >= n || j >= n {
            return Err(EpiError::InvalidArgument(format!("conflict pair ({i}, {j}) out of range")));
        }
        if partner[i].is_some() || partner[j].is_some() {
            return Err(EpiError::InvalidArgument(format!("task in pair ({i}, {j}) is already paired")));
        }
        partner[i] = Some((g, j));
        partner[j] = Some((g, i));
    }

    let size = input_dim * output_dim;
    let entry = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("positive std");
    let mut teachers: Vec<Option<Vec<f64>>> = vec![None; n];
    for id in 0..n {
        if teachers[id].is_some() {
            continue;
        }
        let base: Vec<f64> = (0..size).map(|_| entry.sample(rng)).collect();
        if let Some((_, other)) = partner[id] {
            teachers[other] = Some(antiparallel(&base, suite.orthogonal_noise, rng));
        }
        teachers[id] = Some(base);
    }
    Ok(teachers
        .into_iter()
        .enumerate()
        .map(|(id, teacher)| TaskSpec {
            id,
            kind: suite.kind,
            teacher: teacher.expect("every teacher assigned"),
            input_dim,
            output_dim,
            noise_std: suite.noise_std,
            conflict_group: partner[id].map(|(g, _)| g),
            input_scales: suite.input_scales.clone(),
        })
        .collect())
}

/// `−base + noise·‖base‖·u` with `u` a random unit vector orthogonal to `base`.
fn antiparallel(base: &[f64], noise: f64, rng: &mut Rng) -> Vec<f64> {
    let mut out: Vec<f64> = base.iter().map(|v| -v).collect();
    if noise == 0.0 {
        return out;
    }
    let norm2: f64 = base.iter().map(|v| v * v).sum();
    let mut r: Vec<f64> = (0..base.len()).map(|_| StandardNormal.sample(rng)).collect();
    let proj = r.iter().zip(base).map(|(a, b)| a * b).sum::<f64>() / norm2;
    for (ri, bi) in r.iter_mut().zip(base) {
        *ri -= proj * bi;
    }
    let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = noise * norm2.sqrt() / rn;
    for (o, ri) in out.iter_mut().zip(&r) {
        *o += scale * ri;
    }
    out
}

/// Cosine between two flattened teachers.
pub fn teacher_cosine(a: &TaskSpec, b: &TaskSpec) -> f64 {
    let dot: f64 = a.teacher.iter().zip(&b.teacher).map(|(x, y)| x * y).sum();
    let na: f64 = a.teacher.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.teacher.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// `x ~ N(0, diag(scales²))`; regression `y = Tx + noise`, classification
/// `y = argmax(Tx + noise)`.
pub fn sample_batch(task: &TaskSpec, rng: &mut Rng, batch_size: usize) -> Result<Batch> {
    if batch_size == 0 {
        return Err(EpiError::InvalidArgument("batch size must be >= 1".into()));
    }
    let (i_dim, o_dim) = (task.input_dim, task.output_dim);
    let mut inputs = vec![0.0; batch_size * i_dim];
    for (f, x) in inputs.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        *x = match &task.input_scales {
            Some(s) => z * s[f % i_dim],
            None => z,
        };
    }
    let mut outputs = vec![0.0; batch_size * o_dim];
    for r in 0..batch_size {
        let x = &inputs[r * i_dim..(r + 1) * i_dim];
        for o in 0..o_dim {
            let w = &task.teacher[o * i_dim..(o + 1) * i_dim];
            let mut y: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            if task.noise_std > 0.0 {
                let n: f64 = StandardNormal.sample(rng);
                y += task.noise_std * n;
            }
            outputs[r * o_dim + o] = y;
        }
    }
    let targets = match task.kind {
        TaskKind::LinearRegression => Targets::Values(outputs),
        TaskKind::RotatedClassification => {
            Targets::Labels(outputs.chunks(o_dim).map(argmax).collect())
        }
    };
    Ok(Batch {
        inputs,
        targets,
        rows: batch_size,
        task_id: task.id,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    /// One task per stage, in id order.
    PaperSequence,
    /// Tasks shuffled, then dealt into stages of the heuristic size profile.
    Random,
    /// Conflict-group members share a stage.
    Heuristic,
    /// A single stage mixing every task.
    FullMix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mixing {
    FullMix,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub id: usize,
    pub tasks: Vec<usize>,
    pub steps: usize,
}

impl Stage {
    /// Task for the next batch, uniform over the stage's tasks.
    pub fn draw_task(&self, rng: &mut Rng) -> usize {
        if self.tasks.len() == 1 {
            self.tasks[0]
        } else {
            self.tasks[rng.random_range(0..self.tasks.len())]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub stages: Vec<Stage>,
    pub mixing: Mixing,
    /// Held-out batch per task, indexed by task id.
    pub eval_sets: Vec<Batch>,
}

impl TaskStream {
    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.steps).sum()
    }

    /// Stage whose training defines each task's initial performance: the last
    /// stage that contains it.
    pub fn owning_stage(&self, task: usize) -> Option<usize> {
        self.stages.iter().rposition(|s| s.tasks.contains(&task))
    }
}

/// Stage groups by conflict group, ordered by their smallest task id.
fn heuristic_groups(tasks: &[TaskSpec]) -> Vec<Vec<usize>> {
    let mut groups: Vec<(Option<usize>, Vec<usize>)> = Vec::new();
    for t in tasks {
        match t.conflict_group {
            Some(g) => match groups.iter_mut().find(|(k, _)| *k == Some(g)) {
                Some((_, members)) => members.push(t.id),
                None => groups.push((Some(g), vec![t.id])),
            },
            None => groups.push((None, vec![t.id])),
        }
    }
    let mut out: Vec<Vec<usize>> = groups.into_iter().map(|(_, m)| m).collect();
    out.sort_by_key(|m| m.iter().copied().min());
    out
}

/// Arranges tasks into stages. Each stage trains `budget_per_stage` steps per
/// task it contains, so every ordering spends the same total budget.
pub fn build_stream(
    tasks: &[TaskSpec],
    ordering: Ordering,
    seeds: &SeedTree,
    budget_per_stage: usize,
    eval_size: usize,
) -> Result<TaskStream> {
    if tasks.is_empty() {
        return Err(EpiError::Empty("task list".into()));
    }
    if budget_per_stage == 0 || eval_size == 0 {
        return Err(EpiError::InvalidArgument("stage budget and eval size must be >= 1".into()));
    }
    let ids: Vec<usize> = tasks.iter().map(|t| t.id).collect();
    let groups: Vec<Vec<usize>> = match ordering {
        Ordering::PaperSequence => ids.iter().map(|&i| vec![i]).collect(),
        Ordering::FullMix => vec![ids.clone()],
        Ordering::Heuristic => heuristic_groups(tasks),
        Ordering::Random => {
            let sizes: Vec<usize> = heuristic_groups(tasks).iter().map(Vec::len).collect();
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut seeds.stream("order"));
            let mut groups = Vec::new();
            let mut rest = &shuffled[..];
            for s in sizes {
                let (head, tail) = rest.split_at(s);
                let mut g = head.to_vec();
                g.sort_unstable();
                groups.push(g);
                rest = tail;
            }
            groups
        }
    };
    let stages = groups
        .into_iter()
        .enumerate()
        .map(|(id, tasks)| Stage {
            id,
            steps: budget_per_stage * tasks.len(),
            tasks,
        })
        .collect();
    let eval_sets = tasks
        .iter()
        .map(|t| sample_batch(t, &mut seeds.indexed("eval", t.id as u64), eval_size))
        .collect::<Result<_>>()?;
    Ok(TaskStream {
        stages,
        mixing: if ordering == Ordering::FullMix {
            Mixing::FullMix
        } else {
            Mixing::Sequential
        },
        eval_sets,
    })
}
