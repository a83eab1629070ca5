//! Derivative-free minimization: bracketed Brent line searches and
//! Powell-style coordinate sweeps.

const GOLDEN: f64 = 1.618_033_988_749_895;
const CGOLD: f64 = 0.381_966_011_250_105;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineMin {
    /// Step along the search direction; 0 when no improvement was found.
    pub alpha: f64,
    pub value: f64,
    pub evals: usize,
}

/// Minimizes `f(α)` starting from `α = 0` where `f(0) = f0`.
///
/// Brackets a minimum by stepping `step` in whichever direction descends,
/// expanding geometrically, then refines with Brent's method to absolute
/// tolerance `tol`. Only strict improvements over `f0` are returned.
pub fn line_minimize<F: FnMut(f64) -> f64>(f: F, f0: f64, step: f64, tol: f64, max_evals: usize) -> LineMin {
    line_minimize_within(f, f0, step, tol, max_evals, f64::INFINITY)
}

/// [`line_minimize`] with the bracket confined to `|α| <= limit`.
pub fn line_minimize_within<F: FnMut(f64) -> f64>(
    mut f: F,
    f0: f64,
    step: f64,
    tol: f64,
    max_evals: usize,
    limit: f64,
) -> LineMin {
    let step = step.min(limit);
    let mut evals = 0usize;
    let mut eval = |a: f64, evals: &mut usize| {
        *evals += 1;
        let v = f(a);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let (mut a, mut fa) = (0.0, f0);
    let (mut b, mut fb) = (step, eval(step, &mut evals));
    let (c, fc);
    if fb >= fa {
        let (m, fm) = (-step, eval(-step, &mut evals));
        if fm < fa {
            // Descend in the negative direction.
            b = m;
            fb = fm;
        } else {
            // Minimum bracketed by [-step, step] around 0.
            let r = brent(&mut f, -step, 0.0, step, f0, tol, max_evals.saturating_sub(evals), &mut evals);
            return finish(r, f0, evals);
        }
    }
    // Expand from (a, b) downhill until the function rises.
    let clamp = |x: f64| x.clamp(-limit, limit);
    if b.abs() >= limit {
        return finish((b, fb), f0, evals);
    }
    let mut cc = clamp(b + GOLDEN * (b - a));
    let mut fcc = eval(cc, &mut evals);
    while fcc < fb && evals < max_evals {
        if cc.abs() >= limit {
            // Still descending at the edge of the allowed interval.
            return finish((cc, fcc), f0, evals);
        }
        a = b;
        fa = fb;
        b = cc;
        fb = fcc;
        cc = clamp(b + GOLDEN * (b - a));
        fcc = eval(cc, &mut evals);
    }
    let _ = fa;
    c = cc;
    fc = fcc;
    if fc < fb {
        // Ran out of evaluations while still descending.
        return finish((c, fc), f0, evals);
    }
    let (lo, hi) = if a < c { (a, c) } else { (c, a) };
    let r = brent(&mut f, lo, b, hi, fb, tol, max_evals.saturating_sub(evals), &mut evals);
    finish(r, f0, evals)
}

fn finish((x, fx): (f64, f64), f0: f64, evals: usize) -> LineMin {
    if fx < f0 {
        LineMin { alpha: x, value: fx, evals }
    } else {
        LineMin {
            alpha: 0.0,
            value: f0,
            evals,
        }
    }
}

/// Brent's minimizer on `[lo, hi]` with known interior point `x0`, `f(x0) = f0`.
#[allow(clippy::too_many_arguments)]
fn brent<F: FnMut(f64) -> f64>(
    f: &mut F,
    lo: f64,
    x0: f64,
    hi: f64,
    f0: f64,
    tol: f64,
    budget: usize,
    evals: &mut usize,
) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let (mut x, mut w, mut v) = (x0, x0, x0);
    let (mut fx, mut fw, mut fv) = (f0, f0, f0);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut used = 0usize;
    while used < budget {
        let xm = 0.5 * (a + b);
        let tol1 = tol * 0.5 + 1e-12 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if !(p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x)) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let mut fu = f(u);
        if fu.is_nan() {
            fu = f64::INFINITY;
        }
        *evals += 1;
        used += 1;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Per-coordinate search settings for [`powell_sweep`].
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub steps: Vec<f64>,
    pub tols: Vec<f64>,
    /// Largest move per line search along each coordinate; zero freezes it.
    pub limits: Vec<f64>,
    pub max_evals_per_line: usize,
    /// Follow the coordinate pass with a search along the net displacement.
    pub extrapolate: bool,
}

/// One Powell-style pass: a line search along every coordinate axis, then
/// (optionally) along the accumulated displacement. Only strictly improving
/// steps are taken, so the returned value never exceeds `fx`.
pub fn powell_sweep<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &mut [f64], fx: f64, s: &SweepSettings) -> (f64, usize) {
    let start = x.to_vec();
    let mut cur = fx;
    let mut evals = 0;
    let mut trial = x.to_vec();
    for i in 0..x.len() {
        if s.limits[i] <= 0.0 {
            continue;
        }
        let base = x[i];
        let r = line_minimize_within(
            |a| {
                trial.copy_from_slice(x);
                trial[i] = base + a;
                f(&trial)
            },
            cur,
            s.steps[i],
            s.tols[i],
            s.max_evals_per_line,
            s.limits[i],
        );
        evals += r.evals;
        if r.alpha != 0.0 {
            x[i] = base + r.alpha;
            cur = r.value;
        }
    }
    if s.extrapolate {
        let dir: Vec<f64> = x.iter().zip(&start).map(|(a, b)| a - b).collect();
        let moved = dir.iter().zip(&s.steps).filter(|(d, _)| d.abs() > 0.0).count();
        if moved > 1 {
            let origin = x.to_vec();
            let r = line_minimize_within(
                |a| {
                    for ((t, o), d) in trial.iter_mut().zip(&origin).zip(&dir) {
                        *t = o + a * d;
                    }
                    f(&trial)
                },
                cur,
                0.5,
                0.02,
                s.max_evals_per_line,
                2.0,
            );
            evals += r.evals;
            if r.alpha != 0.0 {
                for ((xi, o), d) in x.iter_mut().zip(&origin).zip(&dir) {
                    *xi = o + r.alpha * d;
                }
                cur = r.value;
            }
        }
    }
    (cur, evals)
}
