use dipa_autodiff::{Graph, ParamId, ParamStore, Result, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform(rng, &[fan_in, fan_out], bound));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(x, w, b)
    }
}

/// Stack of dense layers, each followed by ReLU.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        width: usize,
        depth: usize,
    ) -> Self {
        let layers = (0..depth)
            .map(|i| {
                Dense::new(
                    store,
                    rng,
                    &format!("{name}.{i}"),
                    if i == 0 { fan_in } else { width },
                    width,
                )
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Result<Var> {
        for l in &self.layers {
            let h = l.forward(g, x)?;
            x = g.relu(h);
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        kernel: usize,
        cin: usize,
        cout: usize,
    ) -> Self {
        let bound = 1.0 / ((kernel * cin) as f64).sqrt();
        let w = store.add(
            format!("{name}.w"),
            uniform(rng, &[kernel, cin, cout], bound),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let y = g.conv1d(x, w, b)?;
        Ok(g.relu(y))
    }
}
