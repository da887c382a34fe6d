//! Damped Gauss-Newton steps for the fitting objective.
//!
//! Every term except the constraint is a sum of squares. Its Gauss-Newton
//! matrix has one dense block per frame, off-diagonal blocks between
//! neighbouring frames (smoothness and per-frame identity) and, in shared
//! mode, a border for the identity coefficients. The damped system is
//! solved by block-tridiagonal elimination followed by a small Schur
//! complement on the border.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rotation::{matrix_to_rot6d, rot6d_jacobian, rot6d_to_matrix};

use super::{AlphaMode, Coefficients, FitProblem, Layout};

/// Gauss-Newton matrix `J^T J` of the squared residuals, in blocks.
#[derive(Clone)]
pub(super) struct Normal {
    diag: Vec<DMatrix<f64>>,
    /// Coupling of frame `f` (rows) with frame `f + 1` (columns).
    off: Vec<DMatrix<f64>>,
    /// Coupling of frame `f` (rows) with the shared identity (columns).
    border: Vec<DMatrix<f64>>,
    corner: DMatrix<f64>,
}

impl Layout {
    fn start(&self, f: usize) -> usize {
        match self.mode {
            AlphaMode::Shared => self.na + f * self.block(),
            AlphaMode::PerFrame => f * self.block(),
        }
    }

    fn n_border(&self) -> usize {
        match self.mode {
            AlphaMode::Shared => self.na,
            AlphaMode::PerFrame => 0,
        }
    }
}

fn add_identity(m: &mut DMatrix<f64>, at: usize, n: usize, w: f64) {
    for k in 0..n {
        m[(at + k, at + k)] += w;
    }
}

/// `J` of the nine entries of a decoded rotation w.r.t. its 6D pair.
fn rotation_rows(d: &[Matrix3<f64>; 6]) -> DMatrix<f64> {
    DMatrix::from_fn(9, 6, |r, c| d[c][(r % 3, r / 3)])
}

impl FitProblem<'_> {
    pub(super) fn normal_matrix(&self, x: &[f64], coef: Coefficients) -> Result<Normal> {
        let l = self.layout;
        let (n, nar) = (l.block(), l.n_border());
        let shared_z = (l.mode == AlphaMode::Shared).then(|| self.rig.identity_offset(&x[l.alpha(0)]));
        let loc = |f: usize, global: usize| global - l.start(f);

        let frames: Vec<Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)>> = (0..l.frames)
            .into_par_iter()
            .map(|f| {
                let z_alpha = match &shared_z {
                    Some(z) => z.clone(),
                    None => self.rig.identity_offset(&x[l.alpha(f)]),
                };
                let pose = self.frame_pose(x, f);
                let z = self.rig.expression(&z_alpha, pose.beta);
                let fr = &self.track.frames[f];
                let jac = self.rig.jacobian(&z, &pose, &self.camera, &fr.visible)?;
                let rows = 2 * fr.n_visible();
                let w = (coef.lm / fr.n_visible() as f64).sqrt();
                let mut jl = DMatrix::zeros(rows, n);
                let mut ja = DMatrix::zeros(rows, nar);
                let (b0, rh, t) = (loc(f, l.beta(f).start), loc(f, l.rot_head(f)), loc(f, l.trans(f)));
                let re = [loc(f, l.rot_eye(f, 0)), loc(f, l.rot_eye(f, 1))];
                for (i, row) in jac.iter().flatten().flat_map(|j| &j.rows).enumerate() {
                    for (k, v) in row.beta.iter().enumerate() {
                        jl[(i, b0 + k)] = w * v;
                    }
                    for k in 0..6 {
                        jl[(i, rh + k)] = w * row.rot_head[k];
                        jl[(i, re[0] + k)] = w * row.rot_eyes[0][k];
                        jl[(i, re[1] + k)] = w * row.rot_eyes[1][k];
                    }
                    for k in 0..3 {
                        jl[(i, t + k)] = w * row.trans[k];
                    }
                    match l.mode {
                        AlphaMode::Shared => {
                            for (k, v) in row.alpha.iter().enumerate() {
                                ja[(i, k)] = w * v;
                            }
                        }
                        AlphaMode::PerFrame => {
                            let a0 = loc(f, l.alpha(f).start);
                            for (k, v) in row.alpha.iter().enumerate() {
                                jl[(i, a0 + k)] = w * v;
                            }
                        }
                    }
                }
                let mut d = jl.tr_mul(&jl);
                add_identity(&mut d, b0, l.nb, coef.reg);
                if l.mode == AlphaMode::PerFrame {
                    add_identity(&mut d, loc(f, l.alpha(f).start), l.na, coef.reg);
                }
                Ok((d, jl.tr_mul(&ja), ja.tr_mul(&ja)))
            })
            .collect();

        let mut diag = Vec::with_capacity(l.frames);
        let mut border = Vec::with_capacity(l.frames);
        let mut corner = DMatrix::zeros(nar, nar);
        add_identity(&mut corner, 0, nar, coef.reg * l.frames as f64);
        for r in frames {
            let (d, b, c) = r?;
            diag.push(d);
            border.push(b);
            corner += c;
        }

        let mut off = vec![DMatrix::zeros(n, n); l.frames.saturating_sub(1)];
        for f in 0..l.frames.saturating_sub(1) {
            let mut pair = |a: usize, len: usize, w: f64| {
                // blocks share one local layout
                let p = loc(f, a);
                add_identity(&mut diag[f], p, len, w);
                add_identity(&mut diag[f + 1], p, len, w);
                add_identity(&mut off[f], p, len, -w);
            };
            pair(l.beta(f).start, l.nb, coef.smooth);
            pair(l.trans(f), 3, coef.smooth);
            if l.mode == AlphaMode::PerFrame {
                pair(l.alpha(f).start, l.na, coef.id);
            }
        }
        if coef.smooth != 0.0 {
            for at in [0, 1, 2] {
                let offset = |f: usize| match at {
                    0 => l.rot_head(f),
                    s => l.rot_eye(f, s - 1),
                };
                let rows: Vec<DMatrix<f64>> = (0..l.frames)
                    .map(|f| rot6d_jacobian(&super::rot6(x, offset(f))).map(|(_, d)| rotation_rows(&d)))
                    .collect::<Result<_>>()?;
                for f in 0..l.frames.saturating_sub(1) {
                    let p = loc(f, offset(f));
                    let (ja, jb) = (&rows[f], &rows[f + 1]);
                    let w = coef.smooth;
                    let mut view = diag[f].view_mut((p, p), (6, 6));
                    view += ja.tr_mul(ja) * w;
                    let mut view = diag[f + 1].view_mut((p, p), (6, 6));
                    view += jb.tr_mul(jb) * w;
                    let mut view = off[f].view_mut((p, p), (6, 6));
                    view -= ja.tr_mul(jb) * w;
                }
            }
        }
        Ok(Normal {
            diag,
            off,
            border,
            corner,
        })
    }
}

/// Offsets of the three rotations of frame `f`.
fn rotations(l: &Layout, f: usize) -> [usize; 3] {
    [l.rot_head(f), l.rot_eye(f, 0), l.rot_eye(f, 1)]
}

/// Change of variables from each 6D pair to a rotation vector `w` acting
/// as `R exp([w]x)`. The 6D pair has three directions the objective does
/// not see (the lengths of both columns and the skew of the second), which
/// leave Gauss-Newton steps poorly scaled; the tangent space has none.
/// The last three slots of every rotation block become dummies.
pub(super) struct Tangent {
    /// Per frame and rotation: local offset and the `6 x 6` map from
    /// tangent to 6D steps (last three columns zero).
    maps: Vec<Vec<(usize, DMatrix<f64>)>>,
}

impl Tangent {
    pub(super) fn at(x: &[f64], layout: &Layout) -> Result<Self> {
        let l = *layout;
        let maps = (0..l.frames)
            .map(|f| {
                rotations(&l, f)
                    .into_iter()
                    .map(|at| {
                        let r = rot6d_to_matrix(&super::rot6(x, at))?;
                        let mut p = DMatrix::zeros(6, 6);
                        for k in 0..3 {
                            let g = r * Vector3::ith(k, 1.0).cross_matrix();
                            for i in 0..6 {
                                p[(i, k)] = g[(i % 3, i / 3)];
                            }
                        }
                        Ok((at - l.start(f), p))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(Self { maps })
    }

    /// `m P_f` in place.
    fn right(&self, m: &mut DMatrix<f64>, f: usize) {
        for (o, p) in &self.maps[f] {
            let cols = m.columns(*o, 6) * p;
            m.columns_mut(*o, 6).copy_from(&cols);
        }
    }

    /// `P_f^T m` in place.
    fn left(&self, m: &mut DMatrix<f64>, f: usize) {
        for (o, p) in &self.maps[f] {
            let rows = p.tr_mul(&m.rows(*o, 6));
            m.rows_mut(*o, 6).copy_from(&rows);
        }
    }

    /// The Gauss-Newton matrix in tangent coordinates, dummies pinned.
    pub(super) fn normal(&self, mut h: Normal, layout: &Layout) -> Normal {
        let l = *layout;
        for f in 0..l.frames {
            self.right(&mut h.diag[f], f);
            self.left(&mut h.diag[f], f);
            self.left(&mut h.border[f], f);
            if f + 1 < l.frames {
                self.right(&mut h.off[f], f + 1);
                self.left(&mut h.off[f], f);
            }
        }
        for f in 0..l.frames {
            for at in rotations(&l, f) {
                for k in 3..6 {
                    h.pin(&l, at + k);
                }
            }
        }
        h
    }

    /// A gradient in tangent coordinates.
    pub(super) fn gradient(&self, g: &[f64], layout: &Layout) -> Vec<f64> {
        let l = *layout;
        let mut out = g.to_vec();
        for f in 0..l.frames {
            for (o, p) in &self.maps[f] {
                let at = l.start(f) + o;
                let t = p.tr_mul(&DVector::from_column_slice(&g[at..at + 6]));
                out[at..at + 6].copy_from_slice(t.as_slice());
            }
        }
        out
    }
}

/// `x` moved by `-step`, where rotation blocks of `step` hold tangent
/// vectors.
pub(super) fn retract(x: &[f64], step: &[f64], layout: &Layout) -> Result<Vec<f64>> {
    let l = *layout;
    let mut out: Vec<f64> = x.iter().zip(step).map(|(a, s)| a - s).collect();
    for f in 0..l.frames {
        for at in rotations(&l, f) {
            let r = rot6d_to_matrix(&super::rot6(x, at))?;
            let w = -Vector3::new(step[at], step[at + 1], step[at + 2]);
            let moved = r * Rotation3::new(w).into_inner();
            out[at..at + 6].copy_from_slice(&matrix_to_rot6d(&moved));
        }
    }
    Ok(out)
}

fn cholesky(m: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    m.cholesky().ok_or_else(|| Error::Diverged {
        iteration: 0,
        reason: "damped normal matrix is not positive definite".into(),
    })
}

/// Marquardt damping: diagonal scaled by `1 + mu`, plus a small floor for
/// directions the residuals do not see.
fn damped(m: &DMatrix<f64>, mu: f64, floor: f64) -> DMatrix<f64> {
    let mut d = m.clone();
    for i in 0..d.nrows() {
        d[(i, i)] += mu * (m[(i, i)] + floor);
    }
    d
}

impl Normal {
    /// Pins one variable: its step comes out zero and the rest of the
    /// system is solved as if it were a constant.
    pub(super) fn pin(&mut self, layout: &Layout, global: usize) {
        let l = *layout;
        let f = (global - l.start(0)) / l.block();
        let i = global - l.start(f);
        let d = &mut self.diag[f];
        d.row_mut(i).fill(0.0);
        d.column_mut(i).fill(0.0);
        d[(i, i)] = 1.0;
        if f + 1 < l.frames {
            self.off[f].row_mut(i).fill(0.0);
        }
        if f > 0 {
            self.off[f - 1].column_mut(i).fill(0.0);
        }
        if l.n_border() > 0 {
            self.border[f].row_mut(i).fill(0.0);
        }
    }

    /// `s^T H s` for a step in the flattened layout.
    pub(super) fn quadratic(&self, s: &[f64], layout: &Layout) -> f64 {
        let l = *layout;
        let (n, nar) = (l.block(), l.n_border());
        let part = |f: usize| DVector::from_column_slice(&s[l.start(f)..l.start(f) + n]);
        let sa = DVector::from_column_slice(&s[..nar]);
        let mut total = sa.dot(&(&self.corner * &sa));
        for f in 0..l.frames {
            let sf = part(f);
            total += sf.dot(&(&self.diag[f] * &sf));
            if f + 1 < l.frames {
                total += 2.0 * sf.dot(&(&self.off[f] * part(f + 1)));
            }
            if nar > 0 {
                total += 2.0 * sf.dot(&(&self.border[f] * &sa));
            }
        }
        total
    }

    /// Solves `(H + damping) s = rhs` for a right-hand side in the
    /// flattened variable layout.
    pub(super) fn solve(&self, rhs: &[f64], mu: f64, layout: &Layout) -> Result<Vec<f64>> {
        let l = *layout;
        let (n, nar, frames) = (l.block(), l.n_border(), l.frames);
        let floor = self
            .diag
            .iter()
            .flat_map(|d| d.diagonal().iter().copied().collect::<Vec<_>>())
            .fold(0.0f64, f64::max)
            * 1e-9
            + 1e-12;

        // forward elimination over [rhs | border]
        let mut pivots = Vec::with_capacity(frames);
        let mut ys: Vec<DMatrix<f64>> = Vec::with_capacity(frames);
        for f in 0..frames {
            let mut s = damped(&self.diag[f], mu, floor);
            let mut y = DMatrix::zeros(n, 1 + nar);
            let g0 = l.start(f);
            for i in 0..n {
                y[(i, 0)] = rhs[g0 + i];
            }
            if nar > 0 {
                y.columns_mut(1, nar).copy_from(&self.border[f]);
            }
            if f > 0 {
                let e = &self.off[f - 1];
                let prev: &nalgebra::Cholesky<f64, nalgebra::Dyn> = &pivots[f - 1];
                let se = prev.solve(e);
                s -= e.tr_mul(&se);
                y -= se.tr_mul(&ys[f - 1]);
            }
            pivots.push(cholesky(s)?);
            ys.push(y);
        }
        // back substitution
        let mut xs: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); frames];
        for f in (0..frames).rev() {
            let mut y = ys[f].clone();
            if f + 1 < frames {
                y -= &self.off[f] * &xs[f + 1];
            }
            xs[f] = pivots[f].solve(&y);
        }

        let mut out = vec![0.0; l.len()];
        let mut da = DVector::zeros(nar);
        if nar > 0 {
            let mut schur = damped(&self.corner, mu, floor);
            let mut r = DVector::from_column_slice(&rhs[..nar]);
            for f in 0..frames {
                let b = &self.border[f];
                schur -= b.tr_mul(&xs[f].columns(1, nar));
                r -= b.tr_mul(&xs[f].column(0));
            }
            // symmetrize against round-off before factorizing
            let schur = (&schur + schur.transpose()) * 0.5;
            da = cholesky(schur)?.solve(&r);
            out[..nar].copy_from_slice(da.as_slice());
        }
        for f in 0..frames {
            let mut s = xs[f].column(0).into_owned();
            if nar > 0 {
                s -= xs[f].columns(1, nar) * &da;
            }
            let g0 = l.start(f);
            out[g0..g0 + n].copy_from_slice(s.as_slice());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{project_landmarks, FitConfig, LandmarkTrack, LossTerm};
    use crate::synthetic::{random_sequence, RandomParamsConfig, SyntheticHead, SyntheticHeadConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(n: &Normal, l: &Layout) -> DMatrix<f64> {
        let (b, nar) = (l.block(), l.n_border());
        let mut h = DMatrix::zeros(l.len(), l.len());
        h.view_mut((0, 0), (nar, nar)).copy_from(&n.corner);
        for f in 0..l.frames {
            let s = l.start(f);
            h.view_mut((s, s), (b, b)).copy_from(&n.diag[f]);
            if nar > 0 {
                h.view_mut((s, 0), (b, nar)).copy_from(&n.border[f]);
                h.view_mut((0, s), (nar, b)).copy_from(&n.border[f].transpose());
            }
            if f + 1 < l.frames {
                let t = l.start(f + 1);
                h.view_mut((s, t), (b, b)).copy_from(&n.off[f]);
                h.view_mut((t, s), (b, b)).copy_from(&n.off[f].transpose());
            }
        }
        h
    }

    fn check_mode(mode: AlphaMode) {
        let h = SyntheticHead::build(&SyntheticHeadConfig::small());
        let cam = h.fit_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seq = random_sequence(&h.model, &mut rng, 3, &RandomParamsConfig::default());
        let frames = seq.iter().map(|p| project_landmarks(&h.model, p, &cam).unwrap()).collect();
        let track = LandmarkTrack::new(cam.width, cam.height, frames);
        let cfg = FitConfig {
            alpha_mode: mode,
            ..FitConfig::default()
        };
        let problem = FitProblem::new(&h.model, &cam, &track, &cfg).unwrap();
        let x = problem.pack(&seq).unwrap();
        let l = problem.layout;
        let coef = Coefficients::only(LossTerm::Total, &cfg, l.frames);
        let normal = problem.normal_matrix(&x, coef).unwrap();
        let full = dense(&normal, &l);
        assert!((&full - full.transpose()).abs().max() < 1e-9);

        // at the labels every landmark residual vanishes, so the Hessian of
        // the smooth terms is the Gauss-Newton matrix up to the rotation
        // curvature of the smoothness term; compare along the blendshapes
        let eps = 1e-5;
        let g = |x: &[f64]| {
            let mut g = problem.evaluate(x, coef, true).unwrap().1.unwrap();
            // constraint is piecewise linear and has no curvature
            let c = Coefficients::only(LossTerm::Constraint, &cfg, l.frames);
            let gc = problem.evaluate(x, c, true).unwrap().1.unwrap();
            g.iter_mut().zip(gc).for_each(|(a, b)| *a -= coef.c * b);
            g
        };
        for i in l.beta(1).step_by(7).chain(l.trans(0)..l.trans(0) + 3) {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let (gp, gm) = (g(&xp), g(&xm));
            for j in 0..l.len() {
                let fd = (gp[j] - gm[j]) / (2.0 * eps) * 0.5;
                assert!((fd - full[(j, i)]).abs() < 1e-4 * (1.0 + fd.abs()), "{i} {j}: {fd} vs {}", full[(j, i)]);
            }
        }

        let rhs: Vec<f64> = (0..l.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu = 0.3;
        let s = normal.solve(&rhs, mu, &l).unwrap();
        let floor = normal
            .diag
            .iter()
            .flat_map(|d| d.diagonal().iter().copied().collect::<Vec<_>>())
            .fold(0.0f64, f64::max)
            * 1e-9
            + 1e-12;
        let mut damped_full = full.clone();
        for i in 0..l.len() {
            damped_full[(i, i)] += mu * (full[(i, i)] + floor);
        }
        let r = &damped_full * DVector::from_column_slice(&s) - DVector::from_column_slice(&rhs);
        assert!(r.amax() < 1e-8, "residual {:e}", r.amax());
        let sv = DVector::from_column_slice(&s);
        let q = sv.dot(&(&full * &sv));
        assert!((normal.quadratic(&s, &l) - q).abs() < 1e-9 * q.abs().max(1.0));
    }

    #[test]
    fn normal_matrix_and_block_solve_shared() {
        check_mode(AlphaMode::Shared);
    }

    #[test]
    fn normal_matrix_and_block_solve_per_frame() {
        check_mode(AlphaMode::PerFrame);
    }

    #[test]
    fn pinned_variables_do_not_move() {
        let h = SyntheticHead::build(&SyntheticHeadConfig::small());
        let cam = h.fit_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let seq = random_sequence(&h.model, &mut rng, 2, &RandomParamsConfig::default());
        let frames = seq.iter().map(|p| project_landmarks(&h.model, p, &cam).unwrap()).collect();
        let track = LandmarkTrack::new(cam.width, cam.height, frames);
        let cfg = FitConfig::default();
        let problem = FitProblem::new(&h.model, &cam, &track, &cfg).unwrap();
        let x = problem.pack(&seq).unwrap();
        let l = problem.layout;
        let coef = Coefficients::only(LossTerm::Total, &cfg, l.frames);
        let tangent = Tangent::at(&x, &l).unwrap();
        let mut normal = tangent.normal(problem.normal_matrix(&x, coef).unwrap(), &l);
        let pin = l.beta(1).start + 2;
        normal.pin(&l, pin);
        let mut rhs = tangent.gradient(&vec![1.0; l.len()], &l);
        rhs[pin] = 0.0;
        let s = normal.solve(&rhs, 1e-3, &l).unwrap();
        assert_eq!(s[pin], 0.0);
        for f in 0..l.frames {
            for at in rotations(&l, f) {
                assert!(s[at + 3..at + 6].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn tangent_step_matches_rotation_derivative() {
        // a small tangent step moves the 6D pair along the mapped direction
        let l = Layout {
            mode: AlphaMode::Shared,
            na: 2,
            nb: 3,
            frames: 1,
        };
        let mut x = vec![0.0; l.len()];
        for (k, at) in rotations(&l, 0).into_iter().enumerate() {
            let r = crate::rotation::axis_angle(Vector3::new(1.0, 2.0, 0.5 + k as f64), 0.4 + 0.1 * k as f64);
            x[at..at + 6].copy_from_slice(&matrix_to_rot6d(&r));
        }
        let t = Tangent::at(&x, &l).unwrap();
        let eps = 1e-6;
        for at in rotations(&l, 0) {
            for k in 0..3 {
                let mut step = vec![0.0; l.len()];
                step[at + k] = -eps;
                let moved = retract(&x, &step, &l).unwrap();
                let (o, p) = t.maps[0].iter().find(|(o, _)| l.start(0) + o == at).unwrap();
                assert_eq!(l.start(0) + o, at);
                for i in 0..6 {
                    let fd = (moved[at + i] - x[at + i]) / eps;
                    assert!((fd - p[(i, k)]).abs() < 1e-5);
                }
            }
        }
    }
}
