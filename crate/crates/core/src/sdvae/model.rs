use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LatentVector, MeshHierarchy, Result, SdVaeError};
use crate::diff::{Graph, Result as DiffResult, Tensor, Var};
use crate::linalg::CsrMatrix;
use crate::mesh::{CorrespondedMesh, MeshTopology};
use crate::LATENT_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
}

/// Layer widths of the encoder and generator. Both lists have one entry per
/// hierarchy level below the template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_features: Vec<usize>,
    pub decoder_features: Vec<usize>,
    pub sampling_factor: usize,
    pub spiral_len: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_features: vec![32, 32, 32, 64],
            decoder_features: vec![64, 32, 32, 32],
            sampling_factor: 4,
            spiral_len: 9,
            activation: Activation::Elu,
        }
    }
}

impl ModelConfig {
    pub fn levels(&self) -> usize {
        self.encoder_features.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_features.is_empty() || self.encoder_features.len() != self.decoder_features.len() {
            return Err(SdVaeError::Config(
                "encoder and decoder need the same, non-zero number of levels".into(),
            ));
        }
        if self
            .encoder_features
            .iter()
            .chain(&self.decoder_features)
            .any(|&f| f == 0)
            || self.spiral_len == 0
            || self.sampling_factor < 2
        {
            return Err(SdVaeError::Config("layer widths and spiral length must be positive".into()));
        }
        Ok(())
    }
}

/// Per-vertex mean shape and a single scalar spread, applied before encoding
/// and undone after generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<[f64; 3]>,
    pub scale: f64,
}

impl Normalizer {
    pub fn fit(meshes: &[CorrespondedMesh]) -> Result<Self> {
        let first = meshes.first().ok_or(SdVaeError::BatchTooSmall { needed: 1, got: 0 })?;
        let n = first.vertex_count();
        let mut mean = vec![[0.0; 3]; n];
        for m in meshes {
            if !m.same_topology(first) {
                return Err(SdVaeError::TopologyMismatch);
            }
            for (acc, p) in mean.iter_mut().zip(m.positions()) {
                for d in 0..3 {
                    acc[d] += p[d];
                }
            }
        }
        let count = meshes.len() as f64;
        mean.iter_mut().flatten().for_each(|v| *v /= count);
        let mut ss = 0.0;
        for m in meshes {
            for (p, mu) in m.positions().iter().zip(&mean) {
                for d in 0..3 {
                    ss += (p[d] - mu[d]).powi(2);
                }
            }
        }
        let std = (ss / (count * n as f64 * 3.0)).sqrt();
        Ok(Self {
            mean,
            scale: if std > 1e-12 { std } else { 1.0 },
        })
    }

    pub fn normalize_into(&self, mesh: &CorrespondedMesh, out: &mut Vec<f64>) {
        for (p, mu) in mesh.positions().iter().zip(&self.mean) {
            for d in 0..3 {
                out.push((p[d] - mu[d]) / self.scale);
            }
        }
    }

    pub fn denormalize(&self, flat: &[f64]) -> Vec<[f64; 3]> {
        flat.chunks(3)
            .zip(&self.mean)
            .map(|(x, mu)| std::array::from_fn(|d| x[d] * self.scale + mu[d]))
            .collect()
    }

    /// `mean / scale`, i.e. the normalised coordinates of the origin offset.
    pub fn offset(&self) -> Vec<f64> {
        self.mean.iter().flatten().map(|v| v / self.scale).collect()
    }
}

/// Trained (or freshly initialised) network with everything needed to run it.
#[derive(Debug, Clone)]
pub struct SdVae {
    pub topology: Arc<MeshTopology>,
    pub hierarchy: Arc<MeshHierarchy>,
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    /// Flat parameter list; see [`SdVae::parameter_names`] for the layout.
    pub params: Vec<Tensor>,
    up: Vec<Arc<CsrMatrix>>,
}

/// Maximum meshes per forward pass at inference time.
const INFERENCE_CHUNK: usize = 32;

impl SdVae {
    /// Glorot-uniform weights, zero biases.
    pub fn new(
        topology: Arc<MeshTopology>,
        hierarchy: Arc<MeshHierarchy>,
        config: ModelConfig,
        normalizer: Normalizer,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if hierarchy.depth() != config.levels() || hierarchy.spiral_len != config.spiral_len {
            return Err(SdVaeError::Config(format!(
                "hierarchy has {} levels and spiral length {}, model expects {} and {}",
                hierarchy.depth(),
                hierarchy.spiral_len,
                config.levels(),
                config.spiral_len
            )));
        }
        if hierarchy.levels[0].vertex_count != topology.vertex_count()
            || normalizer.mean.len() != topology.vertex_count()
        {
            return Err(SdVaeError::TopologyMismatch);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Self::shapes(&config, &hierarchy)
            .into_iter()
            .map(|(_, rows, cols, is_bias)| {
                if is_bias {
                    Tensor::zeros(rows, cols)
                } else {
                    let limit = (6.0 / (rows + cols) as f64).sqrt();
                    let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
                    Tensor::new(rows, cols, data).expect("shape")
                }
            })
            .collect();
        Self::from_parts(topology, hierarchy, config, normalizer, params)
    }

    /// Assembles a model from stored parameters, checking their shapes.
    pub fn from_parts(
        topology: Arc<MeshTopology>,
        hierarchy: Arc<MeshHierarchy>,
        config: ModelConfig,
        normalizer: Normalizer,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        if hierarchy.depth() != config.levels() || hierarchy.spiral_len != config.spiral_len {
            return Err(SdVaeError::Config("hierarchy does not match the model configuration".into()));
        }
        if hierarchy.levels[0].vertex_count != topology.vertex_count()
            || normalizer.mean.len() != topology.vertex_count()
        {
            return Err(SdVaeError::TopologyMismatch);
        }
        let expected: Vec<(usize, usize)> = Self::shapes(&config, &hierarchy)
            .into_iter()
            .map(|(_, r, c, _)| (r, c))
            .collect();
        let got: Vec<(usize, usize)> = params.iter().map(Tensor::shape).collect();
        if expected != got {
            return Err(SdVaeError::Config(format!(
                "parameter shapes {got:?} do not match the architecture {expected:?}"
            )));
        }
        let up = hierarchy.up.iter().cloned().map(Arc::new).collect();
        Ok(Self {
            topology,
            hierarchy,
            config,
            normalizer,
            params,
            up,
        })
    }

    /// `(name, rows, cols, is_bias)` for each parameter in order.
    fn shapes(config: &ModelConfig, hierarchy: &MeshHierarchy) -> Vec<(String, usize, usize, bool)> {
        let s = config.spiral_len;
        let levels = config.levels();
        let coarse = hierarchy.levels[levels].vertex_count;
        let mut out = Vec::new();
        let mut layer = |name: String, fan_in: usize, fan_out: usize| {
            out.push((format!("{name}.weight"), fan_in, fan_out, false));
            out.push((format!("{name}.bias"), 1, fan_out, true));
        };
        let mut f_in = 3;
        for (l, &f) in config.encoder_features.iter().enumerate() {
            layer(format!("encoder.conv{l}"), s * f_in, f);
            f_in = f;
        }
        let flat = coarse * f_in;
        layer("encoder.mu".into(), flat, LATENT_DIM);
        layer("encoder.log_sigma".into(), flat, LATENT_DIM);
        let d0 = config.decoder_features[0];
        layer("decoder.linear".into(), LATENT_DIM, coarse * d0);
        let mut d_in = d0;
        for (l, &d) in config.decoder_features.iter().enumerate() {
            layer(format!("decoder.conv{l}"), s * d_in, d);
            d_in = d;
        }
        layer("decoder.out".into(), s * d_in, 3);
        out
    }

    pub fn parameter_names(&self) -> Vec<String> {
        Self::shapes(&self.config, &self.hierarchy)
            .into_iter()
            .map(|(n, ..)| n)
            .collect()
    }

    pub fn expected_shapes(&self) -> Vec<(usize, usize)> {
        Self::shapes(&self.config, &self.hierarchy)
            .into_iter()
            .map(|(_, r, c, _)| (r, c))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn vertex_count(&self) -> usize {
        self.topology.vertex_count()
    }

    fn activate(&self, g: &mut Graph, x: Var) -> DiffResult<Var> {
        match self.config.activation {
            Activation::Elu => g.elu(x),
            Activation::Relu => g.relu(x),
        }
    }

    fn spiral_conv(&self, g: &mut Graph, x: Var, level: usize, batch: usize, w: Var, b: Var) -> DiffResult<Var> {
        let lvl = &self.hierarchy.levels[level];
        let (n, s) = (lvl.vertex_count, self.hierarchy.spiral_len);
        let mut idx = Vec::with_capacity(batch * n * s);
        for item in 0..batch {
            let base = item * n;
            idx.extend(lvl.spirals.iter().map(|&v| base + v));
        }
        let stacked = g.gather_blocks(x, Arc::from(idx), s)?;
        let y = g.matmul(stacked, w)?;
        g.add_row(y, b)
    }

    fn pool(&self, g: &mut Graph, x: Var, level: usize, batch: usize) -> DiffResult<Var> {
        let n = self.hierarchy.levels[level].vertex_count;
        let kept = &self.hierarchy.down[level];
        let mut idx = Vec::with_capacity(batch * kept.len());
        for item in 0..batch {
            idx.extend(kept.iter().map(|&v| item * n + v));
        }
        g.gather_rows(x, Arc::from(idx))
    }

    /// Encoder on a stacked `(batch·n) × 3` normalised input; returns
    /// `batch × 75` means and log standard deviations.
    pub fn encode_graph(&self, g: &mut Graph, p: &[Var], x: Var, batch: usize) -> DiffResult<(Var, Var)> {
        let levels = self.config.levels();
        let mut h = x;
        for l in 0..levels {
            let c = self.spiral_conv(g, h, l, batch, p[2 * l], p[2 * l + 1])?;
            let a = self.activate(g, c)?;
            h = self.pool(g, a, l, batch)?;
        }
        let coarse = self.hierarchy.levels[levels].vertex_count;
        let f = g.value(h).cols();
        let flat = g.reshape(h, batch, coarse * f)?;
        let base = 2 * levels;
        let mu = g.matmul(flat, p[base])?;
        let mu = g.add_row(mu, p[base + 1])?;
        let ls = g.matmul(flat, p[base + 2])?;
        let ls = g.add_row(ls, p[base + 3])?;
        Ok((mu, ls))
    }

    /// Generator from `batch × 75` latents to a stacked `(batch·n) × 3`
    /// normalised output.
    pub fn decode_graph(&self, g: &mut Graph, p: &[Var], z: Var, batch: usize) -> DiffResult<Var> {
        let levels = self.config.levels();
        let base = 2 * levels + 4;
        let coarse = self.hierarchy.levels[levels].vertex_count;
        let h = g.matmul(z, p[base])?;
        let h = g.add_row(h, p[base + 1])?;
        let mut h = g.reshape(h, batch * coarse, self.config.decoder_features[0])?;
        for l in 0..levels {
            let level = levels - 1 - l;
            let up = g.sparse_rows(h, self.up[level].clone())?;
            let w = base + 2 + 2 * l;
            let c = self.spiral_conv(g, up, level, batch, p[w], p[w + 1])?;
            h = self.activate(g, c)?;
        }
        let w = base + 2 + 2 * levels;
        self.spiral_conv(g, h, 0, batch, p[w], p[w + 1])
    }

    fn check_topology(&self, mesh: &CorrespondedMesh) -> Result<()> {
        if mesh.topology().id() != self.topology.id() {
            return Err(SdVaeError::TopologyMismatch);
        }
        Ok(())
    }

    /// Normalised positions of `meshes`, stacked vertically (`n·V × 3`).
    pub fn stack(&self, meshes: &[&CorrespondedMesh]) -> Result<Tensor> {
        let n = self.vertex_count();
        let mut flat = Vec::with_capacity(meshes.len() * n * 3);
        for m in meshes {
            self.check_topology(m)?;
            self.normalizer.normalize_into(m, &mut flat);
        }
        Ok(Tensor::new(meshes.len() * n, 3, flat)?)
    }

    fn constants(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|t| g.constant(t.clone())).collect()
    }

    /// Posterior means and log standard deviations.
    pub fn encode(&self, meshes: &[CorrespondedMesh]) -> Result<Vec<(LatentVector, Vec<f64>)>> {
        let mut out = Vec::with_capacity(meshes.len());
        for chunk in meshes.chunks(INFERENCE_CHUNK) {
            let refs: Vec<&CorrespondedMesh> = chunk.iter().collect();
            let mut g = Graph::new();
            let p = self.constants(&mut g);
            let x = g.constant(self.stack(&refs)?);
            let (mu, ls) = self.encode_graph(&mut g, &p, x, chunk.len())?;
            for i in 0..chunk.len() {
                out.push((
                    LatentVector::new(g.value(mu).row(i).to_vec())?,
                    g.value(ls).row(i).to_vec(),
                ));
            }
        }
        Ok(out)
    }

    pub fn encode_means(&self, meshes: &[CorrespondedMesh]) -> Result<Vec<LatentVector>> {
        Ok(self.encode(meshes)?.into_iter().map(|(mu, _)| mu).collect())
    }

    pub fn generate(&self, latents: &[LatentVector]) -> Result<Vec<CorrespondedMesh>> {
        let n = self.vertex_count();
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(INFERENCE_CHUNK) {
            let mut g = Graph::new();
            let p = self.constants(&mut g);
            let data = chunk.iter().flat_map(|z| z.values().iter().copied()).collect();
            let z = g.constant(Tensor::new(chunk.len(), LATENT_DIM, data)?);
            let y = self.decode_graph(&mut g, &p, z, chunk.len())?;
            let values = g.value(y).data();
            for i in 0..chunk.len() {
                let positions = self.normalizer.denormalize(&values[i * n * 3..(i + 1) * n * 3]);
                out.push(CorrespondedMesh::new(self.topology.clone(), positions)?);
            }
        }
        Ok(out)
    }

    /// Decodes the posterior mean of each mesh.
    pub fn reconstruct(&self, meshes: &[CorrespondedMesh]) -> Result<Vec<CorrespondedMesh>> {
        let latents = self.encode_means(meshes)?;
        self.generate(&latents)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::cohort::{generate_synthetic_cohort, ClassLabel, SyntheticFactorSpec};
    use crate::mesh::mean_vertex_distance;

    /// 162-vertex template, two-level hierarchy, narrow layers.
    pub(crate) fn micro_model(seed: u64) -> (SdVae, Vec<CorrespondedMesh>) {
        let spec = SyntheticFactorSpec {
            template_frequency: 4,
            ..SyntheticFactorSpec::default()
        };
        let counts = [(ClassLabel::healthy(), 4), (ClassLabel::new("Apert"), 4)]
            .into_iter()
            .collect();
        let cohort = generate_synthetic_cohort(&spec, &counts, seed).unwrap();
        let template = CorrespondedMesh::new(cohort.template.topology.clone(), cohort.template.rest.clone()).unwrap();
        let config = ModelConfig {
            encoder_features: vec![4, 6],
            decoder_features: vec![6, 4],
            ..ModelConfig::default()
        };
        let hierarchy = MeshHierarchy::build(&template, 2, 4, 9).unwrap();
        let normalizer = Normalizer::fit(&cohort.meshes).unwrap();
        let model = SdVae::new(template.topology().clone(), Arc::new(hierarchy), config, normalizer, seed).unwrap();
        (model, cohort.meshes)
    }

    #[test]
    fn default_parameter_layout() {
        let names = ModelConfig::default();
        assert_eq!(names.levels(), 4);
        let (model, _) = micro_model(0);
        let n = model.parameter_names();
        assert_eq!(n.len(), 2 * (2 + 2 + 1 + 2 + 1));
        assert_eq!(n[0], "encoder.conv0.weight");
        assert_eq!(n.last().unwrap(), "decoder.out.bias");
        for (t, s) in model.params.iter().zip(model.expected_shapes()) {
            assert_eq!(t.shape(), s);
        }
        // first conv: 9 spiral taps × 3 coordinates in, 4 features out
        assert_eq!(model.params[0].shape(), (27, 4));
    }

    #[test]
    fn encode_is_deterministic_and_batch_independent() {
        let (model, meshes) = micro_model(1);
        let a = model.encode(&meshes).unwrap();
        let b = model.encode(&meshes).unwrap();
        assert_eq!(a, b);
        let mut reversed = meshes.clone();
        reversed.reverse();
        let c = model.encode(&reversed).unwrap();
        for (i, item) in c.iter().rev().enumerate() {
            for (x, y) in item.0.values().iter().zip(a[i].0.values()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert_eq!(a[0].0.values().len(), 75);
        assert_eq!(a[0].1.len(), 75);
    }

    #[test]
    fn generate_is_deterministic_and_continuous() {
        let (model, _) = micro_model(2);
        let z = LatentVector::new((0..75).map(|i| ((i as f64) * 0.37).sin()).collect()).unwrap();
        let a = model.generate(std::slice::from_ref(&z)).unwrap();
        let b = model.generate(std::slice::from_ref(&z)).unwrap();
        assert_eq!(a[0].positions(), b[0].positions());
        assert_eq!(a[0].vertex_count(), model.vertex_count());
        let mut last = f64::INFINITY;
        for step in [1e-1, 1e-2, 1e-3, 1e-4] {
            let mut moved = z.clone();
            moved.values_mut().iter_mut().for_each(|v| *v += step);
            let m = model.generate(&[moved]).unwrap();
            let d = mean_vertex_distance(&a[0], &m[0]).unwrap();
            assert!(d < last);
            last = d;
        }
        assert!(last < 1e-2);
    }

    #[test]
    fn normalizer_round_trip() {
        let (model, meshes) = micro_model(3);
        let mut flat = Vec::new();
        model.normalizer.normalize_into(&meshes[0], &mut flat);
        let back = model.normalizer.denormalize(&flat);
        for (p, q) in back.iter().zip(meshes[0].positions()) {
            for d in 0..3 {
                assert!((p[d] - q[d]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mismatched_config_rejected() {
        let (model, _) = micro_model(0);
        let bad = ModelConfig::default();
        assert!(SdVae::new(
            model.topology.clone(),
            model.hierarchy.clone(),
            bad,
            model.normalizer.clone(),
            0
        )
        .is_err());
    }
}
