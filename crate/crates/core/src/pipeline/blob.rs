//! `XMLWF` model blob, format version 1. All integers and reals are
//! little-endian.
//!
//! ```text
//! "XMLWF"  u32 version
//! str      canonical pipeline spec text
//! str      train data hash (hex)
//! u32      feature count
//! u32      transformer count, then per transformer:
//!            u8 tag (0 mean_impute, 1 standardize), f64s means [, f64s stds]
//! u8       model tag, then
//!            0 linear:  f64s weights, f64 bias
//!            1 forest:  trees
//!            2 boosted: f64 init, trees
//! [u8; 32] SHA-256 of every preceding byte
//!
//! str   = u32 byte length + UTF-8
//! f64s  = u32 count + f64 values
//! trees = u32 count, then per tree u32 node count and per node
//!         u32 feature, f64 threshold, u32 left, u32 right, f64 value
//! ```

use sha2::{Digest, Sha256};

use super::{
    FittedModel, FittedPipeline, FittedTransformer, Node, PipelineError, PipelineSpec, Result, Tree,
};

pub const MAGIC: &[u8; 5] = b"XMLWF";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        v.iter().for_each(|x| self.f64(*x));
    }
    fn trees(&mut self, trees: &[Tree]) {
        self.u32(trees.len() as u32);
        for t in trees {
            self.u32(t.nodes.len() as u32);
            for n in &t.nodes {
                self.u32(n.feature);
                self.f64(n.threshold);
                self.u32(n.left);
                self.u32(n.right);
                self.f64(n.value);
            }
        }
    }
}

pub fn serialize_model(model: &FittedPipeline) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.str(&model.spec.canonical_text());
    w.str(&model.train_data_hash);
    w.u32(model.n_features as u32);
    w.u32(model.transformers.len() as u32);
    for t in &model.transformers {
        match t {
            FittedTransformer::MeanImpute { means } => {
                w.u8(0);
                w.f64s(means);
            }
            FittedTransformer::Standardize { means, stds } => {
                w.u8(1);
                w.f64s(means);
                w.f64s(stds);
            }
        }
    }
    match &model.model {
        FittedModel::Linear { weights, bias } => {
            w.u8(0);
            w.f64s(weights);
            w.f64(*bias);
        }
        FittedModel::Forest { trees } => {
            w.u8(1);
            w.trees(trees);
        }
        FittedModel::Boosted { init, trees } => {
            w.u8(2);
            w.f64(*init);
            w.trees(trees);
        }
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or(PipelineError::TruncatedBlob)?;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or(PipelineError::TruncatedBlob)?;
        self.pos = end;
        Ok(bytes)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    /// Length prefix checked against the remaining bytes before allocating.
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(PipelineError::TruncatedBlob);
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| PipelineError::CorruptBlob("invalid UTF-8".into()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn trees(&mut self) -> Result<Vec<Tree>> {
        let n = self.len(4)?;
        (0..n)
            .map(|_| {
                let m = self.len(28)?;
                let nodes = (0..m)
                    .map(|_| {
                        Ok(Node {
                            feature: self.u32()?,
                            threshold: self.f64()?,
                            left: self.u32()?,
                            right: self.u32()?,
                            value: self.f64()?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Tree { nodes })
            })
            .collect()
    }
}

pub fn deserialize_model(blob: &[u8]) -> Result<FittedPipeline> {
    if blob.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(blob) {
            PipelineError::TruncatedBlob
        } else {
            PipelineError::BadMagic
        });
    }
    if &blob[..MAGIC.len()] != MAGIC {
        return Err(PipelineError::BadMagic);
    }
    let mut r = Reader {
        buf: blob,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(PipelineError::UnsupportedVersion(version));
    }
    let spec = PipelineSpec::from_canonical_text(&r.str()?)?;
    let train_data_hash = r.str()?;
    let n_features = r.u32()? as usize;
    let n_transformers = r.len(1)?;
    let mut transformers = Vec::with_capacity(n_transformers);
    for _ in 0..n_transformers {
        let t = match r.u8()? {
            0 => FittedTransformer::MeanImpute { means: r.f64s()? },
            1 => FittedTransformer::Standardize {
                means: r.f64s()?,
                stds: r.f64s()?,
            },
            tag => return Err(PipelineError::CorruptBlob(format!("transformer tag {tag}"))),
        };
        transformers.push(t);
    }
    let model = match r.u8()? {
        0 => FittedModel::Linear {
            weights: r.f64s()?,
            bias: r.f64()?,
        },
        1 => FittedModel::Forest { trees: r.trees()? },
        2 => FittedModel::Boosted {
            init: r.f64()?,
            trees: r.trees()?,
        },
        tag => return Err(PipelineError::CorruptBlob(format!("model tag {tag}"))),
    };
    let payload_end = r.pos;
    let checksum = r.take(CHECKSUM_LEN)?;
    if r.pos != blob.len() {
        return Err(PipelineError::CorruptBlob("trailing bytes".into()));
    }
    if Sha256::digest(&blob[..payload_end]).as_slice() != checksum {
        return Err(PipelineError::ChecksumMismatch);
    }

    let spec_kinds: Vec<_> = spec.transformers().to_vec();
    let blob_kinds: Vec<_> = transformers.iter().map(FittedTransformer::kind).collect();
    if spec_kinds != blob_kinds {
        return Err(PipelineError::CorruptBlob(
            "transformers disagree with spec".into(),
        ));
    }
    let dims_ok = transformers.iter().all(|t| match t {
        FittedTransformer::MeanImpute { means } => means.len() == n_features,
        FittedTransformer::Standardize { means, stds } => {
            means.len() == n_features && stds.len() == n_features
        }
    });
    let model_ok = match &model {
        FittedModel::Linear { weights, .. } => {
            weights.len() == n_features
                && matches!(
                    spec.estimator().kind(),
                    super::EstimatorKind::LogisticRegression | super::EstimatorKind::LinearSvm
                )
        }
        FittedModel::Forest { trees } => {
            spec.estimator().kind() == super::EstimatorKind::RandomForest
                && !trees.is_empty()
                && trees.iter().all(|t| t.is_well_formed(n_features))
        }
        FittedModel::Boosted { trees, .. } => {
            spec.estimator().kind() == super::EstimatorKind::GradientBoosting
                && trees.iter().all(|t| t.is_well_formed(n_features))
        }
    };
    if !dims_ok || !model_ok {
        return Err(PipelineError::CorruptBlob(
            "learned state does not match spec".into(),
        ));
    }
    Ok(FittedPipeline {
        spec,
        n_features,
        transformers,
        model,
        train_data_hash,
        format_version: version,
    })
}
