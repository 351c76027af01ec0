//! Maximizers used by the trainer: L-BFGS with a More-Thuente strong-Wolfe line search
//! (argmin), and Adam.

use std::sync::{Arc, Mutex};
use std::time::Instant;

use argmin::core::observers::{Observe, ObserverMode};
use argmin::core::{CostFunction, Executor, Gradient, IterState, State, KV};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Objective value and gradient at a point.
pub type Objective<'a> = dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync + 'a;

/// Hook run on each accepted iterate; an error stops the run.
pub type IterHook = Box<dyn FnMut(&IterRecord) -> std::result::Result<(), String> + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    QuasiNewton { memory: usize },
    Adam { learning_rate: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::QuasiNewton { memory: 10 }
    }
}

/// One accepted iterate.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub iter: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub params: Vec<f64>,
    pub value: f64,
    pub records: Vec<IterRecord>,
    /// Why the run ended before `max_iters`, if it did.
    pub stopped_early: Option<String>,
}

/// Point, value and gradient of the last evaluation.
type Evaluation = (Vec<f64>, f64, Vec<f64>);

struct Negated<'a, 'b> {
    f: &'b Objective<'a>,
    cache: Mutex<Option<Evaluation>>,
    failure: Mutex<Option<Error>>,
}

impl Negated<'_, '_> {
    fn eval(&self, p: &[f64]) -> std::result::Result<(f64, Vec<f64>), argmin::core::Error> {
        if let Some((x, v, g)) = self.cache.lock().expect("cache lock").as_ref() {
            if x.as_slice() == p {
                return Ok((*v, g.clone()));
            }
        }
        match (self.f)(p) {
            Ok((v, g)) => {
                let out = (-v, g.iter().map(|x| -x).collect::<Vec<_>>());
                *self.cache.lock().expect("cache lock") = Some((p.to_vec(), out.0, out.1.clone()));
                Ok(out)
            }
            Err(e) => {
                let msg = e.to_string();
                *self.failure.lock().expect("failure lock") = Some(e);
                Err(argmin::core::Error::msg(msg))
            }
        }
    }
}

impl CostFunction for Negated<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(p)?.0)
    }
}

impl Gradient for Negated<'_, '_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;
    fn gradient(&self, p: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.eval(p)?.1)
    }
}

type LbfgsState = IterState<Vec<f64>, Vec<f64>, (), (), (), f64>;

struct Recorder {
    start: Instant,
    records: Arc<Mutex<Vec<IterRecord>>>,
    hook: Option<IterHook>,
    last: f64,
    /// Solver coordinates u map to parameters x0 + scale·u.
    origin: Vec<f64>,
    scale: f64,
}

const STOP_NOT_MONOTONE: &str = "line search returned a worse point";

impl Observe<LbfgsState> for Recorder {
    fn observe_iter(
        &mut self,
        state: &LbfgsState,
        _kv: &KV,
    ) -> std::result::Result<(), argmin::core::Error> {
        let value = -state.get_cost();
        if !(value >= self.last) {
            return Err(argmin::core::Error::msg(STOP_NOT_MONOTONE));
        }
        self.last = value;
        let rec = IterRecord {
            iter: state.get_iter() as usize + 1,
            value,
            grad_norm: state
                .get_gradient()
                .map(|g| norm(g) / self.scale)
                .unwrap_or(f64::NAN),
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
            params: state
                .get_param()
                .map(|u| unscale(&self.origin, self.scale, u))
                .unwrap_or_default(),
        };
        if let Some(h) = self.hook.as_mut() {
            h(&rec).map_err(argmin::core::Error::msg)?;
        }
        self.records.lock().expect("records lock").push(rec);
        Ok(())
    }
}

fn unscale(origin: &[f64], scale: f64, u: &[f64]) -> Vec<f64> {
    origin.iter().zip(u).map(|(o, u)| o + scale * u).collect()
}

fn norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Maximizes `f` from `x0` for at most `max_iters` iterations. Errors only when the objective
/// itself fails; optimizer stalls end the run at the best accepted point.
pub fn maximize(
    f: &Objective<'_>,
    x0: Vec<f64>,
    max_iters: usize,
    optimizer: Optimizer,
    hook: Option<IterHook>,
) -> Result<RunOutcome> {
    let (v0, g0) = f(&x0)?;
    check_finite(v0, &g0)?;
    if max_iters == 0 || x0.is_empty() {
        return Ok(RunOutcome {
            params: x0,
            value: v0,
            records: Vec::new(),
            stopped_early: None,
        });
    }
    match optimizer {
        Optimizer::QuasiNewton { memory } => lbfgs(f, x0, v0, &g0, max_iters, memory.max(1), hook),
        Optimizer::Adam { learning_rate } => adam(f, x0, v0, g0, max_iters, learning_rate, hook),
    }
}

fn check_finite(v: f64, g: &[f64]) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::NonFinite {
            what: "bound".into(),
        });
    }
    if let Some(i) = g.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("gradient entry {i}"),
        });
    }
    Ok(())
}

fn lbfgs(
    f: &Objective<'_>,
    x0: Vec<f64>,
    v0: f64,
    g0: &[f64],
    max_iters: usize,
    memory: usize,
    hook: Option<IterHook>,
) -> Result<RunOutcome> {
    // The solver's first trial step is the raw gradient. A uniform change of variables
    // x = x0 + c·u with c = |g0|^(-1/2) makes that step unit length in x; later steps use the
    // curvature-scaled two-loop recursion and are unaffected by c.
    let g0n = norm(g0);
    let scale = if g0n > 1.0 { 1.0 / g0n.sqrt() } else { 1.0 };
    let scaled = |u: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (v, g) = f(&unscale(&x0, scale, u))?;
        Ok((v, g.into_iter().map(|x| scale * x).collect()))
    };
    let problem = Negated {
        f: &scaled,
        cache: Mutex::new(None),
        failure: Mutex::new(None),
    };
    let records = Arc::new(Mutex::new(Vec::new()));
    let recorder = Recorder {
        start: Instant::now(),
        records: records.clone(),
        hook,
        last: v0,
        origin: x0.clone(),
        scale,
    };
    let ls = MoreThuenteLineSearch::new();
    let solver = LBFGS::new(ls, memory)
        .with_tolerance_grad(1e-10)
        .and_then(|s| s.with_tolerance_cost(0.0))
        .map_err(|e| Error::Config(e.to_string()))?;
    // Executor borrows the problem for the run; failures are read back afterwards.
    let failure;
    let result = {
        let exec = Executor::new(ProblemRef(&problem), solver)
            .configure(|s| {
                s.param(vec![0.0; x0.len()])
                    .cost(-v0)
                    .max_iters(max_iters as u64)
            })
            .add_observer(recorder, ObserverMode::Always);
        let r = exec.run();
        failure = problem.failure.lock().expect("failure lock").take();
        r
    };
    if let Some(e) = failure {
        return Err(e);
    }
    let records = std::mem::take(&mut *records.lock().expect("records lock"));
    let stopped_early = match &result {
        Err(e) => Some(e.to_string()),
        Ok(r) if (r.state().get_iter() as usize) < max_iters => {
            Some(format!("{}", r.state().get_termination_status()))
        }
        Ok(_) => None,
    };
    let (params, value) = match records.last() {
        Some(r) => (r.params.clone(), r.value),
        None => (x0, v0),
    };
    Ok(RunOutcome {
        params,
        value,
        records,
        stopped_early,
    })
}

/// argmin takes the problem by value; this forwards to a borrowed one.
struct ProblemRef<'p, 'a, 'b>(&'p Negated<'a, 'b>);

impl CostFunction for ProblemRef<'_, '_, '_> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        self.0.cost(p)
    }
}

impl Gradient for ProblemRef<'_, '_, '_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;
    fn gradient(&self, p: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        self.0.gradient(p)
    }
}

fn adam(
    f: &Objective<'_>,
    mut x: Vec<f64>,
    mut v: f64,
    mut g: Vec<f64>,
    max_iters: usize,
    lr: f64,
    mut hook: Option<IterHook>,
) -> Result<RunOutcome> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let start = Instant::now();
    let n = x.len();
    let (mut m1, mut m2) = (vec![0.0; n], vec![0.0; n]);
    let mut records = Vec::with_capacity(max_iters);
    let (mut best_x, mut best_v) = (x.clone(), v);
    for it in 1..=max_iters {
        let (c1, c2) = (1.0 - B1.powi(it as i32), 1.0 - B2.powi(it as i32));
        for i in 0..n {
            m1[i] = B1 * m1[i] + (1.0 - B1) * g[i];
            m2[i] = B2 * m2[i] + (1.0 - B2) * g[i] * g[i];
            x[i] += lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + EPS);
        }
        (v, g) = f(&x)?;
        check_finite(v, &g)?;
        let rec = IterRecord {
            iter: it,
            value: v,
            grad_norm: norm(&g),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            params: x.clone(),
        };
        if let Some(h) = hook.as_mut() {
            if let Err(msg) = h(&rec) {
                records.push(rec);
                return Ok(RunOutcome {
                    params: best_x,
                    value: best_v,
                    records,
                    stopped_early: Some(msg),
                });
            }
        }
        if v > best_v {
            best_v = v;
            best_x = x.clone();
        }
        records.push(rec);
    }
    Ok(RunOutcome {
        params: best_x,
        value: best_v,
        records,
        stopped_early: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        // max of −(x0−1)² − 10(x1+2)²
        let v = -(x[0] - 1.0).powi(2) - 10.0 * (x[1] + 2.0).powi(2);
        Ok((v, vec![-2.0 * (x[0] - 1.0), -20.0 * (x[1] + 2.0)]))
    }

    fn rosen(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let v = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
        let ga = 2.0 * (1.0 - a) + 400.0 * a * (b - a * a);
        let gb = -200.0 * (b - a * a);
        Ok((v, vec![ga, gb]))
    }

    #[test]
    fn lbfgs_finds_quadratic_maximum() {
        let out = maximize(&quad, vec![5.0, 5.0], 50, Optimizer::default(), None).unwrap();
        assert!((out.params[0] - 1.0).abs() < 1e-6 && (out.params[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn lbfgs_trace_is_monotone_on_rosenbrock() {
        let out = maximize(&rosen, vec![-1.2, 1.0], 200, Optimizer::default(), None).unwrap();
        assert!(out.records.windows(2).all(|w| w[1].value >= w[0].value));
        assert!((out.params[0] - 1.0).abs() < 1e-4, "{:?}", out.params);
    }

    #[test]
    fn adam_climbs() {
        let opt = Optimizer::Adam { learning_rate: 0.1 };
        let out = maximize(&quad, vec![3.0, 0.0], 500, opt, None).unwrap();
        assert!(out.value > -1e-3);
    }

    #[test]
    fn zero_iterations_return_start() {
        let out = maximize(&quad, vec![3.0, 0.0], 0, Optimizer::default(), None).unwrap();
        assert_eq!(out.params, vec![3.0, 0.0]);
        assert!(out.records.is_empty());
    }

    #[test]
    fn objective_failure_is_an_error() {
        let bad = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((f64::NAN, vec![0.0])) };
        assert!(maximize(&bad, vec![0.0], 5, Optimizer::default(), None).is_err());
    }

    #[test]
    fn steep_start_does_not_leave_the_domain() {
        // Gradient 2e4 at the start; an unscaled first step would land far outside |x| < 10.
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0].abs() > 10.0 {
                return Err(Error::NonFinite {
                    what: "outside".into(),
                });
            }
            Ok((-1e4 * (x[0] - 1.0).powi(2), vec![-2e4 * (x[0] - 1.0)]))
        };
        let out = maximize(&f, vec![0.0], 20, Optimizer::default(), None).unwrap();
        assert!((out.params[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hook_can_stop_the_run() {
        let hook: IterHook = Box::new(|r| {
            if r.iter >= 2 {
                Err("enough".into())
            } else {
                Ok(())
            }
        });
        let out = maximize(
            &rosen,
            vec![-1.2, 1.0],
            100,
            Optimizer::default(),
            Some(hook),
        )
        .unwrap();
        assert_eq!(out.records.len(), 1);
        assert!(out.stopped_early.is_some());
    }
}
