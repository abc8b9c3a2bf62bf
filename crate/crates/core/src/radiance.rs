//! A simplified radiance field: pinhole rays, stratified samples, an MLP from
//! position to `(r, g, b, sigma)` and the emission-absorption quadrature.
//!
//! Rendered colours carry tangents with respect to the pixel coordinates
//! `(u, v)`. Sample depths are held fixed, so a tangent enters only through
//! the ray direction: a sample at depth `t` moves by `t * dd/du`. The
//! quadrature has a hand-written adjoint, which lets the joint value and
//! derivative loss on rendered pixels reach the field parameters.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoding::{self, EncodingConfig};
use crate::error::{Error, Result};
use crate::filters::{image_derivatives, FilterKind};
use crate::grid::Grid2D;
use crate::math;
use crate::metrics::{psnr, ssim, EvalProtocol};
use crate::network::{
    backward_trace, forward, forward_trace, init_params, Activation, ActivationKind, DualBatch,
    InitScheme, MlpArch, MlpParams, Trace,
};
use crate::pipelines::NetworkSpec;
use crate::rng::Rng;
use crate::training::{
    diverged_at, sobolev_loss, AdamState, BatchSize, LogEntry, SobolevLoss, TrainConfig,
};

pub type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = math::sqrt(dot(a, a));
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Camera-to-world transform and intrinsics of one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    /// Rows of the `3 x 4` matrix `[R | t]`; the columns of `R` are the
    /// camera's right, up and backward axes in world space.
    pub c2w: [[f64; 4]; 3],
    pub height: usize,
    pub width: usize,
    pub focal: f64,
    pub near: f64,
    pub far: f64,
}

impl CameraPose {
    pub fn new(
        c2w: [[f64; 4]; 3],
        height: usize,
        width: usize,
        focal: f64,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let pose = CameraPose {
            c2w,
            height,
            width,
            focal,
            near,
            far,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c2w.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("camera pose"));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(self.column(i), self.column(j));
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-6 {
                    return Err(Error::invalid(
                        "camera pose: rotation block is not orthonormal",
                    ));
                }
            }
        }
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(Error::invalid("camera pose: need 0 < near < far"));
        }
        if !(self.focal > 0.0) || self.height == 0 || self.width == 0 {
            return Err(Error::invalid(
                "camera pose: need positive focal length and image size",
            ));
        }
        Ok(())
    }

    /// Column `j` of the rotation block.
    pub fn column(&self, j: usize) -> Vec3 {
        [self.c2w[0][j], self.c2w[1][j], self.c2w[2][j]]
    }

    pub fn origin(&self) -> Vec3 {
        self.column(3)
    }

    /// Camera at `eye` looking at `target` with `up` roughly upwards.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        height: usize,
        width: usize,
        focal: f64,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let fwd = normalize([target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]]);
        let right = normalize(cross(fwd, up));
        let cam_up = cross(right, fwd);
        let back = [-fwd[0], -fwd[1], -fwd[2]];
        let mut c2w = [[0.0; 4]; 3];
        for r in 0..3 {
            c2w[r] = [right[r], cam_up[r], back[r], eye[r]];
        }
        CameraPose::new(c2w, height, width, focal, near, far)
    }
}

/// A camera ray and the partials of its (unnormalized) direction with
/// respect to the pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub d_du: Vec3,
    pub d_dv: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }
}

/// Pinhole ray through continuous pixel position `(u, v)`: `u` runs right
/// along columns, `v` down along rows, and the centre of pixel `(r, c)` is
/// `(c + 0.5, r + 0.5)`.
pub fn generate_ray(pose: &CameraPose, u: f64, v: f64) -> Result<Ray> {
    let (w, h) = (pose.width as f64, pose.height as f64);
    if !(0.0..=w).contains(&u) || !(0.0..=h).contains(&v) {
        return Err(Error::invalid(
            "generate_ray: pixel position outside the image",
        ));
    }
    let cam = [
        (u - w / 2.0) / pose.focal,
        -(v - h / 2.0) / pose.focal,
        -1.0,
    ];
    let mut dir = [0.0; 3];
    for (r, out) in dir.iter_mut().enumerate() {
        *out = pose.c2w[r][0] * cam[0] + pose.c2w[r][1] * cam[1] + pose.c2w[r][2] * cam[2];
    }
    let (c0, c1) = (pose.column(0), pose.column(1));
    Ok(Ray {
        origin: pose.origin(),
        dir,
        d_du: c0.map(|x| x / pose.focal),
        d_dv: c1.map(|x| -x / pose.focal),
    })
}

/// `n` depths in `[near, far)`, one per equal-width bin. With `rng` each
/// sample is jittered uniformly inside its bin, otherwise it sits at the bin
/// centre.
pub fn stratified_depths(near: f64, far: f64, n: usize, rng: Option<&mut Rng>) -> Vec<f64> {
    let step = (far - near) / n as f64;
    match rng {
        Some(rng) => (0..n)
            .map(|i| near + step * (i as f64 + rng.next_f64()))
            .collect(),
        None => (0..n).map(|i| near + step * (i as f64 + 0.5)).collect(),
    }
}

/// A ray with its sample depths and quadrature intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub ray: Ray,
    pub t: Vec<f64>,
    /// `t[i+1] - t[i]`, and `far - t[last]` for the last sample.
    pub delta: Vec<f64>,
}

impl RaySamples {
    pub fn new(ray: Ray, t: Vec<f64>, far: f64) -> Result<Self> {
        if t.is_empty() {
            return Err(Error::invalid("ray samples: need at least one depth"));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) || far < t[t.len() - 1] {
            return Err(Error::invalid(
                "ray samples: depths must increase and stay below far",
            ));
        }
        let mut delta: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        delta.push(far - t[t.len() - 1]);
        Ok(RaySamples { ray, t, delta })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Samples for pixel position `(u, v)` of a view.
pub fn ray_samples(
    pose: &CameraPose,
    u: f64,
    v: f64,
    n: usize,
    rng: Option<&mut Rng>,
) -> Result<RaySamples> {
    let ray = generate_ray(pose, u, v)?;
    RaySamples::new(
        ray,
        stratified_depths(pose.near, pose.far, n, rng),
        pose.far,
    )
}

/// Contribution weight `T_i * alpha_i` of every sample and the transmittance
/// left after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub weights: Vec<f64>,
    pub residual: f64,
}

pub fn quadrature_weights(sigma: &[f64], delta: &[f64]) -> Quadrature {
    let mut t = 1.0;
    let weights = sigma
        .iter()
        .zip(delta)
        .map(|(&s, &d)| {
            let x = s * d;
            let w = t * -math::expm1(-x);
            t *= math::exp(-x);
            w
        })
        .collect();
    Quadrature {
        weights,
        residual: t,
    }
}

/// Emission-absorption composite of per-sample colours; no background.
pub fn composite(sigma: &[f64], delta: &[f64], rgb: &[Vec3]) -> Vec3 {
    let q = quadrature_weights(sigma, delta);
    let mut c = [0.0; 3];
    for (w, col) in q.weights.iter().zip(rgb) {
        for k in 0..3 {
            c[k] += w * col[k];
        }
    }
    c
}

/// Per-ray quadrature inputs in flat layout: `sig[i]`, `dsig[i*nd + d]`,
/// `rgb[i*3 + k]`, `drgb[(i*nd + d)*3 + k]`.
struct RayInputs<'a> {
    delta: &'a [f64],
    nd: usize,
    sig: &'a [f64],
    dsig: &'a [f64],
    rgb: &'a [f64],
    drgb: &'a [f64],
}

/// Transmittance and its tangents before each sample.
fn transmittance(inp: &RayInputs) -> (Vec<f64>, Vec<f64>) {
    let (n, nd) = (inp.sig.len(), inp.nd);
    let mut tr = Vec::with_capacity(n);
    let mut dtr = vec![0.0; n * nd];
    let mut t = 1.0;
    let mut dt = vec![0.0; nd];
    for i in 0..n {
        tr.push(t);
        dtr[i * nd..(i + 1) * nd].copy_from_slice(&dt);
        let e = math::exp(-inp.sig[i] * inp.delta[i]);
        for d in 0..nd {
            let ds = inp.dsig[i * nd + d] * inp.delta[i];
            dt[d] = dt[d] * e - t * e * ds;
        }
        t *= e;
    }
    (tr, dtr)
}

/// Rendered colour and its tangents (`nd x 3`, flat).
fn ray_forward(inp: &RayInputs) -> (Vec3, Vec<f64>) {
    let nd = inp.nd;
    let (tr, dtr) = transmittance(inp);
    let mut c = [0.0; 3];
    let mut dc = vec![0.0; nd * 3];
    for i in 0..inp.sig.len() {
        let s = inp.sig[i] * inp.delta[i];
        let e = math::exp(-s);
        let alpha = -math::expm1(-s);
        let w = tr[i] * alpha;
        for k in 0..3 {
            c[k] += w * inp.rgb[i * 3 + k];
        }
        for d in 0..nd {
            let dalpha = e * inp.dsig[i * nd + d] * inp.delta[i];
            let dw = dtr[i * nd + d] * alpha + tr[i] * dalpha;
            for k in 0..3 {
                dc[d * 3 + k] += dw * inp.rgb[i * 3 + k] + w * inp.drgb[(i * nd + d) * 3 + k];
            }
        }
    }
    (c, dc)
}

/// Adjoints of one ray's quadrature inputs given adjoints of its colour and
/// colour tangents. Returns `(g_sig, g_dsig, g_rgb, g_drgb)` in the
/// [`RayInputs`] layout.
fn ray_backward(
    inp: &RayInputs,
    gc: Vec3,
    gdc: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, nd) = (inp.sig.len(), inp.nd);
    let (tr, dtr) = transmittance(inp);
    let mut g_sig = vec![0.0; n];
    let mut g_dsig = vec![0.0; n * nd];
    let mut g_rgb = vec![0.0; n * 3];
    let mut g_drgb = vec![0.0; n * nd * 3];
    let mut gt_next = 0.0;
    let mut gdt_next = vec![0.0; nd];
    let mut gdt = vec![0.0; nd];
    let mut gdalpha = vec![0.0; nd];
    for i in (0..n).rev() {
        let delta = inp.delta[i];
        let s = inp.sig[i] * delta;
        let e = math::exp(-s);
        let alpha = -math::expm1(-s);
        let t = tr[i];
        let w = t * alpha;
        let col = &inp.rgb[i * 3..i * 3 + 3];

        let mut gw = 0.0;
        for k in 0..3 {
            gw += gc[k] * col[k];
            g_rgb[i * 3 + k] = w * gc[k];
        }
        let mut gt = 0.0;
        let mut galpha = 0.0;
        for d in 0..nd {
            let ds = inp.dsig[i * nd + d] * delta;
            let dalpha = e * ds;
            let dt = dtr[i * nd + d];
            let dw = dt * alpha + t * dalpha;
            let mut gdw = 0.0;
            for k in 0..3 {
                let g = gdc[d * 3 + k];
                gw += g * inp.drgb[(i * nd + d) * 3 + k];
                gdw += g * col[k];
                g_rgb[i * 3 + k] += dw * g;
                g_drgb[(i * nd + d) * 3 + k] = w * g;
            }
            // w = t * alpha, dw = dt * alpha + t * dalpha
            gt += gdw * dalpha;
            galpha += gdw * dt;
            gdt[d] = gdw * alpha;
            gdalpha[d] = gdw * t;
        }
        gt += gw * alpha;
        galpha += gw * t;

        // t_next = t * e, dt_next = dt * e + t * de with de = -e * ds
        let mut ge = gt_next * t;
        gt += gt_next * e;
        let mut gs = 0.0;
        for d in 0..nd {
            let ds = inp.dsig[i * nd + d] * delta;
            let de = -e * ds;
            gt += gdt_next[d] * de;
            gdt[d] += gdt_next[d] * e;
            ge += gdt_next[d] * dtr[i * nd + d];
            let gde = gdt_next[d] * t;
            // alpha = 1 - e, dalpha = e * ds, de = -e * ds
            ge += (gdalpha[d] - gde) * ds;
            let gds = (gdalpha[d] - gde) * e;
            g_dsig[i * nd + d] = gds * delta;
        }
        ge -= galpha;
        gs -= ge * e;
        g_sig[i] = gs * delta;

        gt_next = gt;
        gdt_next.copy_from_slice(&gdt);
    }
    (g_sig, g_dsig, g_rgb, g_drgb)
}

/// Position-to-`(r, g, b, sigma)` MLP. Raw outputs are mapped with a sigmoid
/// (colour) and a softplus (density).
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceField {
    pub params: MlpParams,
}

impl RadianceField {
    /// 8 hidden layers of 256 units and 10 encoding levels.
    pub fn default_spec() -> NetworkSpec {
        NetworkSpec {
            hidden_layers: 8,
            hidden_width: 256,
            pe_frequencies: 10,
        }
    }

    pub fn new(
        spec: &NetworkSpec,
        use_pe: bool,
        activation: Activation,
        init: Option<InitScheme>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let arch = MlpArch {
            input_dim: 3,
            output_dim: 4,
            hidden_layers: spec.hidden_layers,
            hidden_width: spec.hidden_width,
            encoding: use_pe.then(|| EncodingConfig::new(spec.pe_frequencies)),
        };
        Ok(RadianceField {
            params: init_params(&arch, activation, init, rng)?,
        })
    }

    pub fn from_params(params: MlpParams) -> Result<Self> {
        if params.input_dim != 3 || params.output_dim() != 4 {
            return Err(Error::invalid("radiance field: expected a 3 -> 4 network"));
        }
        Ok(RadianceField { params })
    }

    /// Mapped `(sigma, rgb)` at one point.
    pub fn query(&self, x: Vec3) -> Result<(f64, Vec3)> {
        let inputs = self
            .params
            .prepare_values(&Grid2D::from_vec(1, 3, 1, x.to_vec())?)?;
        let raw = forward(&self.params, &inputs)?;
        let r = raw.row(0);
        Ok((
            Activation::Softplus.value(r[3]),
            [0, 1, 2].map(|k| Activation::Sigmoid.value(r[k])),
        ))
    }
}

/// Everything the reverse pass over a ray batch needs.
struct BatchTrace {
    inputs: Grid2D,
    seeds: Vec<Grid2D>,
    trace: Trace,
    raw: Grid2D,
    raw_tan: Vec<Grid2D>,
    sig: Vec<f64>,
    dsig: Vec<f64>,
    rgb: Vec<f64>,
    drgb: Vec<f64>,
    /// Start row of each ray.
    offsets: Vec<usize>,
}

fn network_inputs(
    params: &MlpParams,
    rays: &[RaySamples],
    nd: usize,
) -> Result<(Grid2D, Vec<Grid2D>)> {
    let n: usize = rays.iter().map(RaySamples::len).sum();
    let mut pos = Grid2D::zeros(n, 3, 1);
    let mut dpos: Vec<Grid2D> = (0..nd).map(|_| Grid2D::zeros(n, 3, 1)).collect();
    let mut row = 0;
    for rs in rays {
        for &t in &rs.t {
            pos.row_mut(row).copy_from_slice(&rs.ray.at(t));
            for (d, g) in dpos.iter_mut().enumerate() {
                let dd = if d == 0 { rs.ray.d_du } else { rs.ray.d_dv };
                g.row_mut(row).copy_from_slice(&dd.map(|x| t * x));
            }
            row += 1;
        }
    }
    match &params.encoding {
        Some(cfg) => {
            let enc = encoding::encode(cfg, &pos)?;
            let seeds = if nd > 0 {
                encoding::push_tangents(cfg, &pos, &dpos)?
            } else {
                Vec::new()
            };
            Ok((enc, seeds))
        }
        None => Ok((pos, dpos)),
    }
}

/// Sigmoid/softplus mapping of raw outputs into the quadrature layout.
fn map_outputs(raw: &Grid2D, raw_tan: &[Grid2D]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = raw.rows();
    let nd = raw_tan.len();
    let mut sig = vec![0.0; n];
    let mut dsig = vec![0.0; n * nd];
    let mut rgb = vec![0.0; n * 3];
    let mut drgb = vec![0.0; n * nd * 3];
    for i in 0..n {
        let r = raw.row(i);
        let (sv, sd) = (
            Activation::Softplus.value(r[3]),
            Activation::Softplus.derivative(r[3]),
        );
        sig[i] = sv;
        for (d, t) in raw_tan.iter().enumerate() {
            dsig[i * nd + d] = sd * t.get(i, 3, 0);
        }
        for k in 0..3 {
            let (cv, cd) = (
                Activation::Sigmoid.value(r[k]),
                Activation::Sigmoid.derivative(r[k]),
            );
            rgb[i * 3 + k] = cv;
            for (d, t) in raw_tan.iter().enumerate() {
                drgb[(i * nd + d) * 3 + k] = cd * t.get(i, k, 0);
            }
        }
    }
    (sig, dsig, rgb, drgb)
}

fn render_batch(
    field: &RadianceField,
    rays: &[RaySamples],
    nd: usize,
) -> Result<(DualBatch, BatchTrace)> {
    let (inputs, seeds) = network_inputs(&field.params, rays, nd)?;
    let (out, trace) = forward_trace(&field.params, &inputs, &seeds)?;
    let (sig, dsig, rgb, drgb) = map_outputs(&out.primal, &out.tangents);
    let mut offsets = Vec::with_capacity(rays.len());
    let mut color = Grid2D::zeros(rays.len(), 3, 1);
    let mut tangents: Vec<Grid2D> = (0..nd).map(|_| Grid2D::zeros(rays.len(), 3, 1)).collect();
    let mut start = 0;
    for (r, rs) in rays.iter().enumerate() {
        offsets.push(start);
        let end = start + rs.len();
        let inp = RayInputs {
            delta: &rs.delta,
            nd,
            sig: &sig[start..end],
            dsig: &dsig[start * nd..end * nd],
            rgb: &rgb[start * 3..end * 3],
            drgb: &drgb[start * nd * 3..end * nd * 3],
        };
        let (c, dc) = ray_forward(&inp);
        color.row_mut(r).copy_from_slice(&c);
        for (d, t) in tangents.iter_mut().enumerate() {
            t.row_mut(r).copy_from_slice(&dc[d * 3..d * 3 + 3]);
        }
        start = end;
    }
    Ok((
        DualBatch {
            primal: color,
            tangents,
        },
        BatchTrace {
            inputs,
            seeds,
            trace,
            raw: out.primal,
            raw_tan: out.tangents,
            sig,
            dsig,
            rgb,
            drgb,
            offsets,
        },
    ))
}

/// Rendered colours, `rays x 3`.
pub fn volume_render(field: &RadianceField, rays: &[RaySamples]) -> Result<Grid2D> {
    Ok(render_batch(field, rays, 0)?.0.primal)
}

/// Rendered colours with their partials along `u` and `v`, in colour per
/// pixel.
pub fn volume_render_dual(field: &RadianceField, rays: &[RaySamples]) -> Result<DualBatch> {
    Ok(render_batch(field, rays, 2)?.0)
}

/// Parameter gradient of a loss on rendered colours, given the adjoints of
/// the colours (`rays x 3`) and of their tangents (`nd` grids).
fn backward_batch(
    field: &RadianceField,
    rays: &[RaySamples],
    bt: &BatchTrace,
    g_color: &Grid2D,
    g_tan: &[Grid2D],
) -> Result<MlpParams> {
    let nd = g_tan.len();
    let n = bt.raw.rows();
    let mut g_raw = Grid2D::zeros(n, 4, 1);
    let mut g_raw_tan: Vec<Grid2D> = (0..nd).map(|_| Grid2D::zeros(n, 4, 1)).collect();
    for (r, rs) in rays.iter().enumerate() {
        let start = bt.offsets[r];
        let end = start + rs.len();
        let inp = RayInputs {
            delta: &rs.delta,
            nd,
            sig: &bt.sig[start..end],
            dsig: &bt.dsig[start * nd..end * nd],
            rgb: &bt.rgb[start * 3..end * 3],
            drgb: &bt.drgb[start * nd * 3..end * nd * 3],
        };
        let gc = [
            g_color.get(r, 0, 0),
            g_color.get(r, 1, 0),
            g_color.get(r, 2, 0),
        ];
        let gdc: Vec<f64> = (0..nd)
            .flat_map(|d| (0..3).map(move |k| (d, k)))
            .map(|(d, k)| g_tan[d].get(r, k, 0))
            .collect();
        let (g_sig, g_dsig, g_rgb, g_drgb) = ray_backward(&inp, gc, &gdc);
        for (j, i) in (start..end).enumerate() {
            let raw = bt.raw.row(i);
            // density channel
            let (_, f1, f2) = Activation::Softplus.eval(raw[3]);
            let mut g = g_sig[j] * f1;
            for d in 0..nd {
                let gd = g_dsig[j * nd + d];
                g += gd * f2 * bt.raw_tan[d].get(i, 3, 0);
                g_raw_tan[d].set(i, 3, 0, gd * f1);
            }
            g_raw.set(i, 3, 0, g);
            for k in 0..3 {
                let (_, f1, f2) = Activation::Sigmoid.eval(raw[k]);
                let mut g = g_rgb[j * 3 + k] * f1;
                for d in 0..nd {
                    let gd = g_drgb[(j * nd + d) * 3 + k];
                    g += gd * f2 * bt.raw_tan[d].get(i, k, 0);
                    g_raw_tan[d].set(i, k, 0, gd * f1);
                }
                g_raw.set(i, k, 0, g);
            }
        }
    }
    backward_trace(
        &field.params,
        &bt.trace,
        &bt.inputs,
        &bt.seeds,
        &g_raw,
        &g_raw_tan,
    )
}

/// Joint loss on rendered pixels and its parameter gradient. With no
/// derivative targets only the colour term is used and no tangents are
/// built.
pub fn render_loss_and_grad(
    field: &RadianceField,
    rays: &[RaySamples],
    target_rgb: &Grid2D,
    target_derivs: Option<&[Grid2D; 2]>,
    lambda: f64,
) -> Result<(SobolevLoss, MlpParams)> {
    let nd = if target_derivs.is_some() { 2 } else { 0 };
    let (pred, bt) = render_batch(field, rays, nd)?;
    let derivs: &[Grid2D] = match target_derivs {
        Some(d) => d,
        None => &[],
    };
    let loss = sobolev_loss(&pred, target_rgb, derivs, lambda)?;
    let grad = backward_batch(
        field,
        rays,
        &bt,
        &loss.value_residual,
        &loss.tangent_residuals,
    )?;
    Ok((loss, grad))
}

/// A posed image.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub pose: CameraPose,
    pub image: Grid2D,
    /// Colour derivatives along `u` and `v`, per pixel of `image`. When
    /// absent they are filtered from `image` itself.
    pub derivs: Option<[Grid2D; 2]>,
}

impl View {
    pub fn new(pose: CameraPose, image: Grid2D) -> Self {
        View {
            pose,
            image,
            derivs: None,
        }
    }
}

/// Renders every pixel of a pose at bin-centre depths.
pub fn render_view(
    field: &RadianceField,
    pose: &CameraPose,
    samples_per_ray: usize,
) -> Result<Grid2D> {
    const BLOCK: usize = 256;
    let (h, w) = (pose.height, pose.width);
    let mut out = Grid2D::zeros(h, w, 3);
    let depths = stratified_depths(pose.near, pose.far, samples_per_ray, None);
    let mut pixels = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).peekable();
    while pixels.peek().is_some() {
        let block: Vec<(usize, usize)> = pixels.by_ref().take(BLOCK).collect();
        let rays = block
            .iter()
            .map(|&(r, c)| {
                let ray = generate_ray(pose, c as f64 + 0.5, r as f64 + 0.5)?;
                RaySamples::new(ray, depths.clone(), pose.far)
            })
            .collect::<Result<Vec<_>>>()?;
        let colors = volume_render(field, &rays)?;
        for (k, &(r, c)) in block.iter().enumerate() {
            for ch in 0..3 {
                out.set(r, c, ch, colors.get(k, ch, 0));
            }
        }
    }
    Ok(out)
}

/// Indices of training and held-out views: every `every`-th view, starting
/// with the first, is held out.
pub fn split_views(n: usize, every: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|&i| every == 0 || i % every != 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadianceConfig {
    /// Learning rate, iterations, seed, activation, `omega0`, encoding and
    /// Sobolev switches, `lambda`, filter and logging. Derivative targets are
    /// always in colour per pixel, matching the ray parameterisation.
    pub train: TrainConfig,
    pub network: NetworkSpec,
    pub init: Option<InitScheme>,
    pub samples_per_ray: usize,
    pub holdout_every: usize,
}

impl Default for RadianceConfig {
    fn default() -> Self {
        RadianceConfig {
            train: TrainConfig {
                learning_rate: 5e-4,
                iterations: 400_000,
                batch_size: BatchSize::Samples(128),
                omega0: 1.0,
                use_positional_encoding: true,
                log_interval: 1000,
                ..TrainConfig::default()
            },
            network: RadianceField::default_spec(),
            init: Some(InitScheme::KaimingNormal),
            samples_per_ray: 64,
            holdout_every: 8,
        }
    }
}

impl RadianceConfig {
    pub fn activation(&self) -> Activation {
        self.train.activation.with_omega(self.train.omega0)
    }

    pub fn init_field(&self) -> Result<RadianceField> {
        let mut rng = Rng::new(self.train.seed);
        let init = match self.train.activation {
            ActivationKind::Sine => self.init,
            _ => None,
        };
        RadianceField::new(
            &self.network,
            self.train.use_positional_encoding,
            self.activation(),
            init,
            &mut rng,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadianceReport {
    pub field: RadianceField,
    pub log: Vec<LogEntry>,
    pub train_views: Vec<usize>,
    pub eval_views: Vec<usize>,
    /// Mean over held-out views (all channels, whole frame).
    pub eval_psnr: f64,
    pub eval_ssim: f64,
}

/// Mean PSNR and SSIM of renders of `views[idx]`.
pub fn evaluate_views(
    field: &RadianceField,
    views: &[View],
    idx: &[usize],
    samples_per_ray: usize,
) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let proto = EvalProtocol::novel_view();
    let (mut p, mut s) = (0.0, 0.0);
    for &i in idx {
        let img = render_view(field, &views[i].pose, samples_per_ray)?;
        p += psnr(&img, &views[i].image, &proto, None)?;
        s += ssim(&img, &views[i].image, &proto)?;
    }
    Ok((p / idx.len() as f64, s / idx.len() as f64))
}

/// Per-pixel colour derivatives of a view image along `u` and `v`.
fn view_targets(img: &Grid2D, filter: FilterKind) -> Result<(Grid2D, Grid2D)> {
    let (du, dv) = image_derivatives(img, filter)?;
    let inv = 1.0 / filter.gain();
    Ok((du.scale(inv), dv.scale(inv)))
}

/// Fits a field to posed images with random pixel batches and Adam.
pub fn train_inverse_rendering(views: &[View], config: &RadianceConfig) -> Result<RadianceReport> {
    config.train.validate()?;
    if config.samples_per_ray == 0 {
        return Err(Error::invalid("samples per ray must be positive"));
    }
    for v in views {
        v.pose.validate()?;
        if v.image.shape() != (v.pose.height, v.pose.width, 3) {
            return Err(Error::invalid("view image does not match its pose size"));
        }
        if let Some(d) = &v.derivs {
            if d.iter().any(|g| g.shape() != v.image.shape()) {
                return Err(Error::invalid(
                    "view derivatives do not match the image size",
                ));
            }
        }
    }
    let (train_views, eval_views) = split_views(views.len(), config.holdout_every);
    if train_views.len() < 2 {
        return Err(Error::invalid(
            "inverse rendering needs at least two training views",
        ));
    }
    let batch = match config.train.batch_size {
        BatchSize::Samples(b) => b,
        BatchSize::Full => 128,
    };
    let sobolev = config.train.use_sobolev;
    let lambda = if sobolev { config.train.lambda } else { 0.0 };
    let targets = if sobolev {
        train_views
            .iter()
            .map(|&i| match &views[i].derivs {
                Some([du, dv]) => Ok((du.clone(), dv.clone())),
                None => view_targets(&views[i].image, config.train.filter),
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let sizes: Vec<usize> = train_views
        .iter()
        .map(|&i| views[i].pose.height * views[i].pose.width)
        .collect();
    let total: usize = sizes.iter().sum();

    let mut field = config.init_field()?;
    let mut adam = AdamState::new(&field.params);
    let mut rng = Rng::new(config.train.seed).split();
    let mut log = Vec::new();

    for it in 1..=config.train.iterations {
        let mut rays = Vec::with_capacity(batch);
        let mut rgb = Grid2D::zeros(batch, 3, 1);
        let mut du = Grid2D::zeros(batch, 3, 1);
        let mut dv = Grid2D::zeros(batch, 3, 1);
        for b in 0..batch {
            let mut k = rng.below(total);
            let mut vi = 0;
            while k >= sizes[vi] {
                k -= sizes[vi];
                vi += 1;
            }
            let view = &views[train_views[vi]];
            let (r, c) = (k / view.pose.width, k % view.pose.width);
            rays.push(ray_samples(
                &view.pose,
                c as f64 + 0.5,
                r as f64 + 0.5,
                config.samples_per_ray,
                Some(&mut rng),
            )?);
            for ch in 0..3 {
                rgb.set(b, ch, 0, view.image.get(r, c, ch));
                if sobolev {
                    du.set(b, ch, 0, targets[vi].0.get(r, c, ch));
                    dv.set(b, ch, 0, targets[vi].1.get(r, c, ch));
                }
            }
        }
        let derivs = [du, dv];
        let (loss, grad) =
            render_loss_and_grad(&field, &rays, &rgb, sobolev.then_some(&derivs), lambda)
                .map_err(|e| diverged_at(e, it))?;
        if !loss.loss.is_finite() || !grad.to_flat().iter().all(|g| g.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                loss: loss.loss,
            });
        }
        adam.step(&mut field.params, &grad, config.train.learning_rate)?;
        if !field.params.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                loss: loss.loss,
            });
        }
        if config.train.log_interval > 0 && it % config.train.log_interval == 0 {
            let (p, _) = evaluate_views(&field, views, &eval_views, config.samples_per_ray)?;
            log.push(LogEntry {
                iteration: it,
                loss_val: loss.value_loss,
                loss_der: loss.deriv_loss,
                psnr_eval: p,
            });
        }
    }
    let (eval_psnr, eval_ssim) =
        evaluate_views(&field, views, &eval_views, config.samples_per_ray)?;
    Ok(RadianceReport {
        field,
        log,
        train_views,
        eval_views,
        eval_psnr,
        eval_ssim,
    })
}

/// A diffuse sphere under one directional light plus ambient term, on a
/// black background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereScene {
    pub center: Vec3,
    pub radius: f64,
    pub albedo: Vec3,
    /// Direction towards the light.
    pub light_dir: Vec3,
    pub ambient: f64,
}

impl Default for SphereScene {
    fn default() -> Self {
        SphereScene {
            center: [0.0; 3],
            radius: 1.0,
            albedo: [0.9, 0.6, 0.3],
            light_dir: [0.5, 0.8, 0.6],
            ambient: 0.25,
        }
    }
}

/// Cameras on a horizontal circle around the origin, all looking at it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRing {
    pub count: usize,
    pub distance: f64,
    /// Elevation above the horizontal plane, degrees.
    pub elevation: f64,
    pub height: usize,
    pub width: usize,
    pub focal: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for PoseRing {
    fn default() -> Self {
        PoseRing {
            count: 16,
            distance: 4.0,
            elevation: 20.0,
            height: 48,
            width: 48,
            focal: 60.0,
            near: 2.0,
            far: 6.0,
        }
    }
}

impl PoseRing {
    pub fn poses(&self) -> Result<Vec<CameraPose>> {
        let el = self.elevation.to_radians();
        (0..self.count)
            .map(|i| {
                let az = 2.0 * core::f64::consts::PI * i as f64 / self.count as f64;
                let eye = [
                    self.distance * math::cos(el) * math::cos(az),
                    self.distance * math::sin(el),
                    self.distance * math::cos(el) * math::sin(az),
                ];
                CameraPose::look_at(
                    eye,
                    [0.0; 3],
                    [0.0, 1.0, 0.0],
                    self.height,
                    self.width,
                    self.focal,
                    self.near,
                    self.far,
                )
            })
            .collect()
    }
}

impl SphereScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0)
            || self.albedo.iter().any(|a| !(0.0..=1.0).contains(a))
            || !(0.0..=1.0).contains(&self.ambient)
        {
            return Err(Error::invalid(
                "sphere scene: need radius > 0 and albedo, ambient in [0, 1]",
            ));
        }
        if dot(self.light_dir, self.light_dir) == 0.0 {
            return Err(Error::invalid("sphere scene: light direction is zero"));
        }
        Ok(())
    }

    /// Colour seen along a ray.
    pub fn shade(&self, ray: &Ray) -> Vec3 {
        let oc = [
            ray.origin[0] - self.center[0],
            ray.origin[1] - self.center[1],
            ray.origin[2] - self.center[2],
        ];
        let a = dot(ray.dir, ray.dir);
        let b = 2.0 * dot(oc, ray.dir);
        let c = dot(oc, oc) - self.radius * self.radius;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return [0.0; 3];
        }
        let t = (-b - math::sqrt(disc)) / (2.0 * a);
        if t <= 0.0 {
            return [0.0; 3];
        }
        let p = ray.at(t);
        let n = normalize([
            p[0] - self.center[0],
            p[1] - self.center[1],
            p[2] - self.center[2],
        ]);
        let lambert = dot(n, normalize(self.light_dir)).max(0.0);
        let shade = self.ambient + (1.0 - self.ambient) * lambert;
        self.albedo.map(|a| a * shade)
    }

    /// Image of the scene with `ss x ss` samples per pixel.
    pub fn render(&self, pose: &CameraPose, ss: usize) -> Result<Grid2D> {
        let ss = ss.max(1);
        let mut img = Grid2D::zeros(pose.height, pose.width, 3);
        let inv = 1.0 / (ss * ss) as f64;
        for r in 0..pose.height {
            for c in 0..pose.width {
                let mut acc = [0.0; 3];
                for i in 0..ss {
                    for j in 0..ss {
                        let u = c as f64 + (j as f64 + 0.5) / ss as f64;
                        let v = r as f64 + (i as f64 + 0.5) / ss as f64;
                        let col = self.shade(&generate_ray(pose, u, v)?);
                        for k in 0..3 {
                            acc[k] += col[k];
                        }
                    }
                }
                for k in 0..3 {
                    img.set(r, c, k, acc[k] * inv);
                }
            }
        }
        Ok(img)
    }

    pub fn views(&self, ring: &PoseRing, ss: usize) -> Result<Vec<View>> {
        self.validate()?;
        ring.poses()?
            .into_iter()
            .map(|pose| Ok(View::new(pose, self.render(&pose, ss)?)))
            .collect()
    }

    /// Derivative targets for `pose` filtered from a render at `factor`
    /// times its resolution, expressed per pixel of `pose` and read back at
    /// each pixel centre (the mean of the central fine pixels).
    pub fn fine_derivatives(
        &self,
        pose: &CameraPose,
        ss: usize,
        factor: usize,
        filter: FilterKind,
    ) -> Result<[Grid2D; 2]> {
        if factor == 0 {
            return Err(Error::invalid(
                "fine_derivatives: factor must be at least 1",
            ));
        }
        let fine_pose = CameraPose {
            height: pose.height * factor,
            width: pose.width * factor,
            focal: pose.focal * factor as f64,
            ..*pose
        };
        let (du, dv) = image_derivatives(&self.render(&fine_pose, ss)?, filter)?;
        let scale = factor as f64 / filter.gain();
        let (lo, hi) = ((factor - 1) / 2, factor / 2);
        let taps = ((hi - lo + 1) * (hi - lo + 1)) as f64;
        let sample = |fine: &Grid2D| {
            let mut out = Grid2D::zeros(pose.height, pose.width, 3);
            for r in 0..pose.height {
                for c in 0..pose.width {
                    for ch in 0..3 {
                        let mut acc = 0.0;
                        for i in lo..=hi {
                            for j in lo..=hi {
                                acc += fine.get(r * factor + i, c * factor + j, ch);
                            }
                        }
                        out.set(r, c, ch, acc * scale / taps);
                    }
                }
            }
            out
        };
        Ok([sample(&du), sample(&dv)])
    }

    /// Views whose derivative targets come from [`SphereScene::fine_derivatives`].
    pub fn views_with_fine_derivatives(
        &self,
        ring: &PoseRing,
        ss: usize,
        factor: usize,
        filter: FilterKind,
    ) -> Result<Vec<View>> {
        let mut views = self.views(ring, ss)?;
        for v in &mut views {
            v.derivs = Some(self.fine_derivatives(&v.pose, ss, factor, filter)?);
        }
        Ok(views)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;

    fn tiny_field(seed: u64, width: usize, pe: usize) -> RadianceField {
        let spec = NetworkSpec {
            hidden_layers: 2,
            hidden_width: width,
            pe_frequencies: pe,
        };
        let mut rng = Rng::new(seed);
        let mut f = RadianceField::new(
            &spec,
            pe > 0,
            Activation::Sine { omega0: 1.0 },
            Some(InitScheme::KaimingNormal),
            &mut rng,
        )
        .unwrap();
        for l in &mut f.params.layers {
            for b in &mut l.bias {
                *b = rng.uniform(-0.3, 0.3);
            }
        }
        f
    }

    fn test_pose() -> CameraPose {
        PoseRing::default().poses().unwrap()[3]
    }

    #[test]
    fn look_at_is_orthonormal_and_centered() {
        let pose = test_pose();
        let ray = generate_ray(&pose, 24.0, 24.0).unwrap();
        let to_origin = normalize(pose.origin().map(|x| -x));
        let d = normalize(ray.dir);
        assert!((dot(d, to_origin) - 1.0).abs() < 1e-12);
        let mut bad = pose;
        bad.c2w[0][0] *= 1.01;
        assert!(bad.validate().is_err());
        let mut flipped = pose;
        flipped.near = 7.0;
        assert!(flipped.validate().is_err());
    }

    #[test]
    fn ray_partials_match_differences() {
        let mut rng = Rng::new(5);
        for _ in 0..5 {
            let eye = [
                rng.uniform(-5.0, 5.0),
                rng.uniform(-5.0, 5.0),
                rng.uniform(3.0, 5.0),
            ];
            let pose = CameraPose::look_at(
                eye,
                [0.1, -0.2, 0.3],
                [0.0, 1.0, 0.0],
                30,
                40,
                35.0,
                1.0,
                9.0,
            )
            .unwrap();
            let (u, v) = (rng.uniform(1.0, 39.0), rng.uniform(1.0, 29.0));
            let ray = generate_ray(&pose, u, v).unwrap();
            let h = 1e-3;
            let pu = generate_ray(&pose, u + h, v).unwrap().dir;
            let mu = generate_ray(&pose, u - h, v).unwrap().dir;
            let pv = generate_ray(&pose, u, v + h).unwrap().dir;
            let mv = generate_ray(&pose, u, v - h).unwrap().dir;
            for k in 0..3 {
                assert!(((pu[k] - mu[k]) / (2.0 * h) - ray.d_du[k]).abs() < 1e-8);
                assert!(((pv[k] - mv[k]) / (2.0 * h) - ray.d_dv[k]).abs() < 1e-8);
            }
        }
        assert!(generate_ray(&test_pose(), -1.0, 3.0).is_err());
    }

    #[test]
    fn stratified_depths_are_increasing_and_bounded() {
        let mut rng = Rng::new(1);
        let t = stratified_depths(2.0, 6.0, 16, Some(&mut rng));
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        assert!(t[0] >= 2.0 && t[15] < 6.0);
        let c = stratified_depths(2.0, 6.0, 4, None);
        assert_eq!(c, [2.5, 3.5, 4.5, 5.5]);
    }

    #[test]
    fn two_sample_hand_case() {
        let delta = [0.5, 1.0];
        let sigma = [core::f64::consts::LN_2 / 0.5, 1e4];
        let c = composite(&sigma, &delta, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!((c[1] - 0.5).abs() < 1e-12);
        assert_eq!(c[2], 0.0);
    }

    #[test]
    fn opaque_first_sample_and_empty_space() {
        let c = composite(&[1e6], &[1.0], &[[0.2, 0.4, 0.6]]);
        assert_eq!(c, [0.2, 0.4, 0.6]);
        let z = composite(&[0.0; 5], &[0.3; 5], &[[1.0; 3]; 5]);
        assert_eq!(z, [0.0; 3]);
    }

    #[test]
    fn weights_are_conserved() {
        let mut rng = Rng::new(2);
        for _ in 0..200 {
            let n = 1 + rng.below(64);
            let sigma = rng.uniform_vec(0.0, 20.0, n);
            let delta = rng.uniform_vec(0.0, 0.5, n);
            let q = quadrature_weights(&sigma, &delta);
            let total: f64 = q.weights.iter().sum::<f64>() + q.residual;
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn denser_front_sample_pulls_toward_its_colour() {
        let rgb = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let delta = [0.4; 3];
        let mut last = -1.0;
        for s0 in [0.0, 0.5, 1.0, 2.0, 5.0] {
            let c = composite(&[s0, 1.0, 1.0], &delta, &rgb);
            assert!(c[0] > last);
            last = c[0];
        }
    }

    #[test]
    fn dual_primal_matches_plain_render() {
        let f = tiny_field(3, 16, 3);
        let pose = test_pose();
        let mut rng = Rng::new(9);
        let rays: Vec<RaySamples> = (0..6)
            .map(|i| ray_samples(&pose, 10.0 + 4.0 * i as f64, 20.0, 8, Some(&mut rng)).unwrap())
            .collect();
        let a = volume_render(&f, &rays).unwrap();
        let b = volume_render_dual(&f, &rays).unwrap();
        assert_eq!(a, b.primal);
    }

    fn render_at(f: &RadianceField, pose: &CameraPose, u: f64, v: f64, t: &[f64]) -> Vec3 {
        let rs = RaySamples::new(generate_ray(pose, u, v).unwrap(), t.to_vec(), pose.far).unwrap();
        let c = volume_render(f, &[rs]).unwrap();
        [c.get(0, 0, 0), c.get(0, 1, 0), c.get(0, 2, 0)]
    }

    #[test]
    fn render_tangents_match_differences() {
        let pose = test_pose();
        let t = stratified_depths(pose.near, pose.far, 4, Some(&mut Rng::new(4)));
        let mut worst: f64 = 0.0;
        for seed in 0..4 {
            let f = tiny_field(seed, 32, 0);
            for &(u, v) in &[(20.3, 22.1), (30.7, 12.4), (8.2, 40.9)] {
                let rs = RaySamples::new(generate_ray(&pose, u, v).unwrap(), t.clone(), pose.far)
                    .unwrap();
                let dual = volume_render_dual(&f, &[rs]).unwrap();
                let h = 1e-4;
                let (pu, mu) = (
                    render_at(&f, &pose, u + h, v, &t),
                    render_at(&f, &pose, u - h, v, &t),
                );
                let (pv, mv) = (
                    render_at(&f, &pose, u, v + h, &t),
                    render_at(&f, &pose, u, v - h, &t),
                );
                for k in 0..3 {
                    for (d, fd) in [
                        (0, (pu[k] - mu[k]) / (2.0 * h)),
                        (1, (pv[k] - mv[k]) / (2.0 * h)),
                    ] {
                        let an = dual.tangents[d].get(0, k, 0);
                        worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6));
                    }
                }
            }
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn empty_and_constant_fields_have_zero_tangents() {
        let pose = test_pose();
        let rays: Vec<RaySamples> = (0..4)
            .map(|i| ray_samples(&pose, 5.0 + 9.0 * i as f64, 17.0, 6, None).unwrap())
            .collect();
        let mut f = tiny_field(1, 8, 2);
        // constant output: zero last-layer weights
        for w in f.params.layers.last_mut().unwrap().weight.data_mut() {
            *w = 0.0;
        }
        let d = volume_render_dual(&f, &rays).unwrap();
        assert!(d
            .tangents
            .iter()
            .all(|t| t.data().iter().all(|&x| x == 0.0)));
        // sigma = softplus(-inf) is not reachable; a large negative bias gives
        // sigma ~ 0 and a near-black render
        let last: &mut Layer = f.params.layers.last_mut().unwrap();
        last.bias[3] = -60.0;
        let d = volume_render_dual(&f, &rays).unwrap();
        assert!(d.primal.data().iter().all(|&x| x.abs() < 1e-20));
        assert!(d
            .tangents
            .iter()
            .all(|t| t.data().iter().all(|&x| x == 0.0)));
    }

    fn scalar_loss(
        f: &RadianceField,
        rays: &[RaySamples],
        rgb: &Grid2D,
        derivs: &[Grid2D; 2],
    ) -> f64 {
        let pred = volume_render_dual(f, rays).unwrap();
        sobolev_loss(&pred, rgb, derivs, 1.0).unwrap().loss
    }

    #[test]
    fn parameter_gradient_matches_differences() {
        let f = tiny_field(7, 8, 2);
        let pose = test_pose();
        let mut rng = Rng::new(11);
        let rays: Vec<RaySamples> = (0..5)
            .map(|_| {
                ray_samples(
                    &pose,
                    rng.uniform(8.0, 40.0),
                    rng.uniform(8.0, 40.0),
                    6,
                    Some(&mut rng),
                )
                .unwrap()
            })
            .collect();
        let rgb = Grid2D::from_vec(5, 3, 1, rng.uniform_vec(0.0, 1.0, 15)).unwrap();
        let derivs = [
            Grid2D::from_vec(5, 3, 1, rng.uniform_vec(-0.1, 0.1, 15)).unwrap(),
            Grid2D::from_vec(5, 3, 1, rng.uniform_vec(-0.1, 0.1, 15)).unwrap(),
        ];
        let (_, grad) = render_loss_and_grad(&f, &rays, &rgb, Some(&derivs), 1.0).unwrap();
        let g = grad.to_flat();
        let base = f.params.to_flat();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..g.len() {
            let mut hi = f.clone();
            let mut lo = f.clone();
            set_flat(&mut hi.params, i, base[i] + h);
            set_flat(&mut lo.params, i, base[i] - h);
            let fd = (scalar_loss(&hi, &rays, &rgb, &derivs)
                - scalar_loss(&lo, &rays, &rgb, &derivs))
                / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6));
        }
        assert!(worst < 1e-4, "{worst}");
    }

    fn set_flat(p: &mut MlpParams, i: usize, v: f64) {
        let mut k = i;
        for t in p.tensors_mut() {
            if k < t.len() {
                t[k] = v;
                return;
            }
            k -= t.len();
        }
    }

    #[test]
    fn value_only_gradient_matches_dual_with_zero_lambda() {
        let f = tiny_field(8, 8, 2);
        let pose = test_pose();
        let rays: Vec<RaySamples> = (0..3)
            .map(|i| ray_samples(&pose, 12.0 + 7.0 * i as f64, 30.0, 5, None).unwrap())
            .collect();
        let rgb = Grid2D::filled(3, 3, 1, 0.4);
        let zeros = [Grid2D::zeros(3, 3, 1), Grid2D::zeros(3, 3, 1)];
        let (_, a) = render_loss_and_grad(&f, &rays, &rgb, None, 0.0).unwrap();
        let (_, b) = render_loss_and_grad(&f, &rays, &rgb, Some(&zeros), 0.0).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
    }

    #[test]
    fn fine_derivatives_at_factor_one_filter_the_view() {
        let scene = SphereScene::default();
        let ring = PoseRing {
            count: 2,
            height: 12,
            width: 12,
            focal: 15.0,
            ..PoseRing::default()
        };
        let pose = ring.poses().unwrap()[1];
        let [du, dv] = scene
            .fine_derivatives(&pose, 2, 1, FilterKind::Sobel)
            .unwrap();
        let (tu, tv) = view_targets(&scene.render(&pose, 2).unwrap(), FilterKind::Sobel).unwrap();
        assert_eq!((du, dv), (tu, tv));
        let fine = scene
            .views_with_fine_derivatives(&ring, 1, 4, FilterKind::Vanilla)
            .unwrap();
        let [du, _] = fine[0].derivs.as_ref().unwrap();
        assert_eq!(du.shape(), (12, 12, 3));
        assert!(du.data().iter().any(|&d| d != 0.0));
    }

    #[test]
    fn split_holds_out_every_eighth() {
        let (train, eval) = split_views(16, 8);
        assert_eq!(eval, [0, 8]);
        assert_eq!(train.len(), 14);
    }

    #[test]
    fn sphere_scene_renders_disc_on_black() {
        let scene = SphereScene::default();
        let ring = PoseRing::default();
        let pose = ring.poses().unwrap()[0];
        let img = scene.render(&pose, 2).unwrap();
        assert_eq!(img.get(0, 0, 0), 0.0);
        let centre = img.get(24, 24, 0);
        assert!(centre > scene.albedo[0] * scene.ambient - 1e-12 && centre <= scene.albedo[0]);
    }

    #[test]
    fn zero_iterations_return_initial_field() {
        let ring = PoseRing {
            count: 4,
            height: 12,
            width: 12,
            focal: 15.0,
            ..PoseRing::default()
        };
        let views = SphereScene::default().views(&ring, 1).unwrap();
        let cfg = RadianceConfig {
            train: TrainConfig {
                iterations: 0,
                ..RadianceConfig::default().train
            },
            network: NetworkSpec {
                hidden_layers: 2,
                hidden_width: 8,
                pe_frequencies: 2,
            },
            samples_per_ray: 4,
            holdout_every: 4,
            ..RadianceConfig::default()
        };
        let rep = train_inverse_rendering(&views, &cfg).unwrap();
        assert_eq!(rep.field, cfg.init_field().unwrap());
        assert!(rep.log.is_empty());
    }

    #[test]
    fn short_training_reduces_loss() {
        let ring = PoseRing {
            count: 8,
            height: 16,
            width: 16,
            focal: 20.0,
            ..PoseRing::default()
        };
        let views = SphereScene::default().views(&ring, 2).unwrap();
        let mk = |iters| RadianceConfig {
            train: TrainConfig {
                iterations: iters,
                learning_rate: 5e-3,
                log_interval: 0,
                ..RadianceConfig::default().train
            },
            network: NetworkSpec {
                hidden_layers: 2,
                hidden_width: 16,
                pe_frequencies: 2,
            },
            samples_per_ray: 8,
            ..RadianceConfig::default()
        };
        let before = train_inverse_rendering(&views, &mk(0)).unwrap();
        let after = train_inverse_rendering(&views, &mk(150)).unwrap();
        assert!(
            after.eval_psnr > before.eval_psnr + 1.0,
            "{} -> {}",
            before.eval_psnr,
            after.eval_psnr
        );
        let again = train_inverse_rendering(&views, &mk(150)).unwrap();
        assert_eq!(after, again);
    }
}
