//! Projection heads and the student-to-teacher contrastive losses.
//!
//! Alignment is per modality: student image projections are contrasted with
//! teacher image embeddings and student text projections with teacher text
//! embeddings. There is deliberately no text-to-image term.

use alloc::format;
use alloc::vec::Vec;

use crate::graph::{Graph, Var};
use crate::nn::{Builder, Linear, ParamStore};
use crate::{Error, Result};

/// `Linear(d -> hidden) -> GELU -> Linear(hidden -> d_C)`.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub up: Linear,
    pub down: Linear,
}

impl ProjectionHead {
    pub fn new(b: &mut Builder, name: &str, input: usize, hidden: usize, output: usize) -> Self {
        ProjectionHead {
            up: Linear::new(b, &format!("{name}.up"), input, hidden, true),
            down: Linear::new(b, &format!("{name}.down"), hidden, output, true),
        }
    }

    pub fn output_width(&self) -> usize {
        self.down.out_dim
    }

    /// Applies the MLP to every row independently.
    pub fn forward_rows(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.up.forward(g, store, x)?;
        let h = g.gelu(h);
        self.down.forward(g, store, h)
    }

    /// Mask-aware mean over rows, then the MLP: one `1 x d_C` row.
    pub fn project(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        features: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let pooled = g.masked_mean_rows(features, mask)?;
        self.forward_rows(g, store, pooled)
    }
}

/// Directional InfoNCE with cosine similarity and diagonal positives:
/// `-(1/B) sum_k log softmax_j(sim(a_k, t_j) / tau)[k]`.
pub fn infonce_directional(g: &mut Graph, anchors: Var, targets: Var, tau: f64) -> Result<Var> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    let sa = g.value(anchors).shape().to_vec();
    let st = g.value(targets).shape().to_vec();
    if sa.len() != 2 || sa != st {
        return Err(Error::shape("infonce_directional", &sa, &st));
    }
    let a = g.normalize_rows(anchors)?;
    let t = g.normalize_rows(targets)?;
    let sim = g.matmul_t(a, t)?;
    let logits = g.scale(sim, 1.0 / tau);
    let labels: Vec<usize> = (0..sa[0]).collect();
    g.cross_entropy(logits, &labels)
}

/// Component values of the alignment loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AlignmentLoss {
    /// Student image anchors against teacher image targets.
    pub ic: f64,
    /// Teacher image anchors against student image targets.
    pub ci: f64,
    pub i: f64,
    pub tc: f64,
    pub ct: f64,
    pub t: f64,
    pub con: f64,
}

/// Graph nodes of every alignment component; `con` is the trainable loss.
#[derive(Clone, Copy, Debug)]
pub struct AlignmentTerms {
    pub ic: Var,
    pub ci: Var,
    pub i: Var,
    pub tc: Var,
    pub ct: Var,
    pub t: Var,
    pub con: Var,
}

impl AlignmentTerms {
    pub fn values(&self, g: &Graph) -> AlignmentLoss {
        let v = |x: Var| g.value(x).item();
        AlignmentLoss {
            ic: v(self.ic),
            ci: v(self.ci),
            i: v(self.i),
            tc: v(self.tc),
            ct: v(self.ct),
            t: v(self.t),
            con: v(self.con),
        }
    }
}

fn half_sum(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let s = g.add(a, b)?;
    Ok(g.scale(s, 0.5))
}

/// Full alignment loss over a batch of `B x d_C` matrices. The teacher
/// inputs are detached, so no gradient reaches them.
pub fn alignment_loss(
    g: &mut Graph,
    student_image: Var,
    teacher_image: Var,
    student_text: Var,
    teacher_text: Var,
    tau: f64,
) -> Result<AlignmentTerms> {
    let shape = g.value(student_image).shape().to_vec();
    for v in [teacher_image, student_text, teacher_text] {
        if g.value(v).shape() != shape.as_slice() {
            return Err(Error::shape("alignment_loss", &shape, g.value(v).shape()));
        }
    }
    let teacher_image = g.detach(teacher_image);
    let teacher_text = g.detach(teacher_text);
    let ic = infonce_directional(g, student_image, teacher_image, tau)?;
    let ci = infonce_directional(g, teacher_image, student_image, tau)?;
    let tc = infonce_directional(g, student_text, teacher_text, tau)?;
    let ct = infonce_directional(g, teacher_text, student_text, tau)?;
    let i = half_sum(g, ic, ci)?;
    let t = half_sum(g, tc, ct)?;
    let con = half_sum(g, i, t)?;
    Ok(AlignmentTerms {
        ic,
        ci,
        i,
        tc,
        ct,
        t,
        con,
    })
}
