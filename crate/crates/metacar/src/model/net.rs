//! Hand-written gated recurrent network: flat weight layout, forward pass,
//! and exact reverse-mode backward pass through the unrolled recurrence.
//! Everything is generic over the scalar type (see `scalar`).

use super::scalar::Real;

/// Tensor order inside the flat weight vector.
const N_TENSORS: usize = 13;

/// Flat layout of all trainable tensors for one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub input: usize,
    pub hidden: usize,
    pub head: usize,
}

impl Layout {
    pub fn new(input: usize, hidden: usize, head: usize) -> Self {
        Self {
            input,
            hidden,
            head,
        }
    }

    pub fn sizes(&self) -> [usize; N_TENSORS] {
        let (i, h, g) = (self.input, self.hidden, self.head);
        [
            h * i, // wz
            h * h, // uz
            h,     // bz
            h * i, // wr
            h * h, // ur
            h,     // br
            h * i, // wh
            h * h, // uh
            h,     // bh
            g * h, // w1
            g,     // b1
            3 * g, // w2
            3,     // b2
        ]
    }

    pub fn offset(&self, k: usize) -> usize {
        self.sizes()[..k].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.sizes().iter().sum()
    }

    /// Fan-in used for the per-tensor uniform init bound.
    pub fn fan_in(&self, k: usize) -> usize {
        match k {
            0 | 3 | 6 => self.input,
            1 | 4 | 7 | 2 | 5 | 8 => self.hidden,
            9 | 10 => self.hidden,
            _ => self.head,
        }
    }
}

#[inline]
fn matvec_add<R: Real>(w: &[R], rows: usize, cols: usize, x: &[R], out: &mut [R]) {
    for i in 0..rows {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = out[i];
        for (a, b) in row.iter().zip(x.iter()) {
            acc = acc + *a * *b;
        }
        out[i] = acc;
    }
}

/// out[j] += w^T d, i.e. out accumulates columns weighted by d.
#[inline]
fn matvec_t_add<R: Real>(w: &[R], rows: usize, cols: usize, d: &[R], out: &mut [R]) {
    for i in 0..rows {
        let row = &w[i * cols..(i + 1) * cols];
        let di = d[i];
        for (o, a) in out.iter_mut().zip(row.iter()) {
            *o = *o + *a * di;
        }
    }
}

/// grad[i][j] += d[i] * x[j]
#[inline]
fn outer_add<R: Real>(grad: &mut [R], d: &[R], x: &[R]) {
    let cols = x.len();
    for (i, di) in d.iter().enumerate() {
        let row = &mut grad[i * cols..(i + 1) * cols];
        for (g, xj) in row.iter_mut().zip(x.iter()) {
            *g = *g + *di * *xj;
        }
    }
}

/// Per-step values needed by the backward pass.
pub struct StepCache<R> {
    pub x: Vec<R>,
    pub h_prev: Vec<R>,
    pub z: Vec<R>,
    pub r: Vec<R>,
    pub hc: Vec<R>,
}

pub struct HeadCache<R> {
    pub h: Vec<R>,
    pub z1: Vec<R>,
}

/// One gated recurrent step:
///   z = sigmoid(Wz x + Uz h + bz)
///   r = sigmoid(Wr x + Ur h + br)
///   hc = tanh(Wh x + Uh (r.h) + bh)
///   h' = (1 - z).h + z.hc
pub fn gru_step<R: Real>(
    w: &[R],
    lay: &Layout,
    h: &mut Vec<R>,
    x: &[R],
    mut cache: Option<&mut Vec<StepCache<R>>>,
) {
    let (hid, inp) = (lay.hidden, lay.input);
    let t = |k: usize| {
        let o = lay.offset(k);
        &w[o..o + lay.sizes()[k]]
    };

    let mut az: Vec<R> = t(2).to_vec();
    matvec_add(t(0), hid, inp, x, &mut az);
    matvec_add(t(1), hid, hid, h, &mut az);
    let z: Vec<R> = az.iter().map(|a| a.sigmoid()).collect();

    let mut ar: Vec<R> = t(5).to_vec();
    matvec_add(t(3), hid, inp, x, &mut ar);
    matvec_add(t(4), hid, hid, h, &mut ar);
    let r: Vec<R> = ar.iter().map(|a| a.sigmoid()).collect();

    let rh: Vec<R> = r.iter().zip(h.iter()).map(|(a, b)| *a * *b).collect();
    let mut ah: Vec<R> = t(8).to_vec();
    matvec_add(t(6), hid, inp, x, &mut ah);
    matvec_add(t(7), hid, hid, &rh, &mut ah);
    let hc: Vec<R> = ah.iter().map(|a| a.tanh()).collect();

    let h_new: Vec<R> = (0..hid)
        .map(|i| (R::one() - z[i]) * h[i] + z[i] * hc[i])
        .collect();

    if let Some(caches) = cache.as_deref_mut() {
        caches.push(StepCache {
            x: x.to_vec(),
            h_prev: std::mem::take(h),
            z,
            r,
            hc,
        });
    }
    *h = h_new;
}

/// Two affine layers with tanh between, mapping the final hidden state to the
/// three derivative outputs.
pub fn head_forward<R: Real>(
    w: &[R],
    lay: &Layout,
    h: &[R],
    cache: Option<&mut Option<HeadCache<R>>>,
) -> [R; 3] {
    let (hid, g) = (lay.hidden, lay.head);
    let t = |k: usize| {
        let o = lay.offset(k);
        &w[o..o + lay.sizes()[k]]
    };
    let mut a1: Vec<R> = t(10).to_vec();
    matvec_add(t(9), g, hid, h, &mut a1);
    let z1: Vec<R> = a1.iter().map(|a| a.tanh()).collect();
    let mut out: Vec<R> = t(12).to_vec();
    matvec_add(t(11), 3, g, &z1, &mut out);
    if let Some(c) = cache {
        *c = Some(HeadCache {
            h: h.to_vec(),
            z1,
        });
    }
    [out[0], out[1], out[2]]
}

/// Full forward over one window of standardized inputs.
pub fn forward_window<R: Real>(
    w: &[R],
    lay: &Layout,
    inputs: &[Vec<R>],
    caches: Option<(&mut Vec<StepCache<R>>, &mut Option<HeadCache<R>>)>,
) -> [R; 3] {
    let mut h = vec![R::zero(); lay.hidden];
    match caches {
        Some((step_caches, head_cache)) => {
            for x in inputs {
                gru_step(w, lay, &mut h, x, Some(step_caches));
            }
            head_forward(w, lay, &h, Some(head_cache))
        }
        None => {
            for x in inputs {
                gru_step(w, lay, &mut h, x, None);
            }
            head_forward(w, lay, &h, None)
        }
    }
}

/// Exact reverse-mode pass for one window; accumulates into `grad`.
pub fn backward_window<R: Real>(
    w: &[R],
    lay: &Layout,
    steps: &[StepCache<R>],
    head: &HeadCache<R>,
    dout: &[R; 3],
    grad: &mut [R],
) {
    let (hid, inp, g) = (lay.hidden, lay.input, lay.head);
    let t = |k: usize| {
        let o = lay.offset(k);
        &w[o..o + lay.sizes()[k]]
    };
    let off: Vec<usize> = (0..N_TENSORS).map(|k| lay.offset(k)).collect();
    let sizes = lay.sizes();

    // Head backward.
    let mut dz1 = vec![R::zero(); g];
    matvec_t_add(t(11), 3, g, dout, &mut dz1);
    outer_add(&mut grad[off[11]..off[11] + sizes[11]], dout, &head.z1);
    for (gb, d) in grad[off[12]..off[12] + 3].iter_mut().zip(dout.iter()) {
        *gb = *gb + *d;
    }
    let da1: Vec<R> = dz1
        .iter()
        .zip(head.z1.iter())
        .map(|(d, z)| *d * (R::one() - *z * *z))
        .collect();
    outer_add(&mut grad[off[9]..off[9] + sizes[9]], &da1, &head.h);
    for (gb, d) in grad[off[10]..off[10] + g].iter_mut().zip(da1.iter()) {
        *gb = *gb + *d;
    }
    let mut dh = vec![R::zero(); hid];
    matvec_t_add(t(9), g, hid, &da1, &mut dh);

    // Backprop through time.
    for sc in steps.iter().rev() {
        let mut dh_prev = vec![R::zero(); hid];
        let mut daz = vec![R::zero(); hid];
        let mut dah = vec![R::zero(); hid];
        for i in 0..hid {
            let dhc = dh[i] * sc.z[i];
            let dz = dh[i] * (sc.hc[i] - sc.h_prev[i]);
            dh_prev[i] = dh[i] * (R::one() - sc.z[i]);
            dah[i] = dhc * (R::one() - sc.hc[i] * sc.hc[i]);
            daz[i] = dz * sc.z[i] * (R::one() - sc.z[i]);
        }
        // Gradient w.r.t. r.h_prev flows through Uh.
        let mut drh = vec![R::zero(); hid];
        matvec_t_add(t(7), hid, hid, &dah, &mut drh);
        let mut dar = vec![R::zero(); hid];
        for i in 0..hid {
            let dr = drh[i] * sc.h_prev[i];
            dh_prev[i] = dh_prev[i] + drh[i] * sc.r[i];
            dar[i] = dr * sc.r[i] * (R::one() - sc.r[i]);
        }
        matvec_t_add(t(1), hid, hid, &daz, &mut dh_prev);
        matvec_t_add(t(4), hid, hid, &dar, &mut dh_prev);

        let rh: Vec<R> = sc
            .r
            .iter()
            .zip(sc.h_prev.iter())
            .map(|(a, b)| *a * *b)
            .collect();
        outer_add(&mut grad[off[0]..off[0] + sizes[0]], &daz, &sc.x);
        outer_add(&mut grad[off[1]..off[1] + sizes[1]], &daz, &sc.h_prev);
        outer_add(&mut grad[off[3]..off[3] + sizes[3]], &dar, &sc.x);
        outer_add(&mut grad[off[4]..off[4] + sizes[4]], &dar, &sc.h_prev);
        outer_add(&mut grad[off[6]..off[6] + sizes[6]], &dah, &sc.x);
        outer_add(&mut grad[off[7]..off[7] + sizes[7]], &dah, &rh);
        for i in 0..hid {
            grad[off[2] + i] = grad[off[2] + i] + daz[i];
            grad[off[5] + i] = grad[off[5] + i] + dar[i];
            grad[off[8] + i] = grad[off[8] + i] + dah[i];
        }
        let _ = inp;
        dh = dh_prev;
    }
}

/// Mean squared error over a batch of windows (mean over windows and the
/// three output components) with its exact gradient.
pub fn loss_and_grad_generic<R: Real>(
    w: &[R],
    lay: &Layout,
    batch_inputs: &[Vec<Vec<R>>],
    targets: &[[f64; 3]],
) -> (R, Vec<R>) {
    let n = batch_inputs.len();
    let scale = R::from_f64(1.0 / (3.0 * n as f64));
    let mut grad = vec![R::zero(); lay.total()];
    let mut loss = R::zero();
    let mut steps: Vec<StepCache<R>> = Vec::with_capacity(
        batch_inputs.first().map(|b| b.len()).unwrap_or(0),
    );
    for (inputs, y) in batch_inputs.iter().zip(targets.iter()) {
        steps.clear();
        let mut head = None;
        let out = forward_window(w, lay, inputs, Some((&mut steps, &mut head)));
        let head = head.expect("head cache");
        let mut dout = [R::zero(); 3];
        for j in 0..3 {
            let e = out[j] - R::from_f64(y[j]);
            loss = loss + e * e * scale;
            dout[j] = R::from_f64(2.0) * e * scale;
        }
        backward_window(w, lay, &steps, &head, &dout, &mut grad);
    }
    (loss, grad)
}
