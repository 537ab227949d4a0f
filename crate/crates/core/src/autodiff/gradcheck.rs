//! Central finite-difference checks of analytic gradients.

use super::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step h. In f32, rounding noise in f grows as ε·|f|/h
    /// while truncation error shrinks as h², so steps near 1e-3 are
    /// noise-dominated.
    pub step: f32,
    /// A coordinate is dropped when the central estimates at h and h/2
    /// differ, or the one-sided estimates differ by more than curvature
    /// explains, by over this fraction of the gradient scale: a kink (ReLU
    /// hinge, clip boundary) lies within h of the point. A kink much closer
    /// than h/2 leaves both central estimates equal, so only the one-sided
    /// pair exposes it. Keep this at or below the pass tolerance: an
    /// undetected kink biases the central estimate by up to half the spread.
    pub kink_tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-2,
            kink_tolerance: 5e-4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic − numeric| over the retained coordinates, divided by
    /// the larger of ‖analytic‖∞ (every coordinate, checked or not) and
    /// ‖numeric‖∞.
    pub max_rel_error: f64,
    pub checked: usize,
    pub rejected: usize,
}

/// Compares `analytic` with central differences of `f` around `point` at
/// each `(tensor, element)` coordinate. `f` must be a pure function of its
/// argument.
pub fn check_coordinates<E>(
    point: &[Tensor],
    analytic: &[Tensor],
    coords: &[(usize, usize)],
    cfg: &GradCheckConfig,
    mut f: impl FnMut(&[Tensor]) -> Result<f64, E>,
) -> Result<GradCheckReport, E> {
    let mut x = point.to_vec();
    let f0 = f(&x)?;
    // (central difference, forward minus backward difference) over the
    // perturbation actually applied after f32 rounding
    let mut differences =
        |x: &mut Vec<Tensor>, (t, i): (usize, usize), h: f32| -> Result<[f64; 2], E> {
            let base = x[t].data()[i];
            let (up, down) = (base + h, base - h);
            x[t].data_mut()[i] = up;
            let hi = f(x)?;
            x[t].data_mut()[i] = down;
            let lo = f(x)?;
            x[t].data_mut()[i] = base;
            let (b, u, d) = (f64::from(base), f64::from(up), f64::from(down));
            Ok([(hi - lo) / (u - d), (hi - f0) / (u - b) - (f0 - lo) / (b - d)])
        };
    let mut rows = Vec::with_capacity(coords.len());
    for &c in coords {
        let [n1, s1] = differences(&mut x, c, cfg.step)?;
        let [n2, s2] = differences(&mut x, c, cfg.step / 2.0)?;
        // smooth: s(h) = h·f'' + O(h³); a kink within h/2 leaves its slope
        // jump in s at both steps
        let spread = (n1 - n2).abs().max((s1 - 2.0 * s2).abs());
        rows.push((f64::from(analytic[c.0].data()[c.1]), n1, spread));
    }
    let scale = analytic
        .iter()
        .flat_map(|t| t.data().iter().map(|&v| f64::from(v).abs()))
        .chain(rows.iter().map(|&(_, n, _)| n.abs()))
        .fold(f64::MIN_POSITIVE, f64::max);
    let mut report = GradCheckReport::default();
    let mut worst = 0.0_f64;
    for (a, n, spread) in rows {
        if spread > cfg.kink_tolerance * scale {
            report.rejected += 1;
            continue;
        }
        report.checked += 1;
        worst = worst.max((a - n).abs());
    }
    report.max_rel_error = worst / scale;
    Ok(report)
}

/// Every coordinate of every tensor in `point`.
pub fn all_coordinates(point: &[Tensor]) -> Vec<(usize, usize)> {
    point
        .iter()
        .enumerate()
        .flat_map(|(t, x)| (0..x.len()).map(move |i| (t, i)))
        .collect()
}

/// Checks `build`, a scalar function of leaves on a tape, at `point`.
/// Forward values for the differences are re-evaluated on fresh tapes.
pub fn check_tape_function<E>(
    point: &[Tensor],
    cfg: &GradCheckConfig,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var, E>,
) -> Result<GradCheckReport, E>
where
    E: From<super::AutodiffError>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = point.iter().map(|t| tape.param(t.clone())).collect();
    let root = build(&mut tape, &leaves)?;
    let mut grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = leaves
        .iter()
        .zip(point)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    check_coordinates(point, &analytic, &all_coordinates(point), cfg, |x| {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = x.iter().map(|t| tape.constant(t.clone())).collect();
        let root = build(&mut tape, &leaves)?;
        Ok(f64::from(tape.value(root).item()))
    })
}
