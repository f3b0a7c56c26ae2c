//! Double-precision gradient checks over the network's building blocks.

use tumorseg::metrics::combined_loss;
use tumorseg::model::blocks::{self, aspp_layout, coordinate_attention_layout, double_conv_layout};
use tumorseg::model::{Bound, Layout, NetworkConfig, Parameters, UNet};
use tumorseg::rng::SeededRng;
use tumorseg::tensor::{gradcheck_many, Probe, Tape, Tensor, Var};
use tumorseg::Result;

pub const STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-5;
pub const NET_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Block {
    All,
    Conv,
    Ca,
    Aspp,
    Net,
    Loss,
}

impl Block {
    pub const EACH: [Block; 5] = [Block::Conv, Block::Ca, Block::Aspp, Block::Net, Block::Loss];

    pub fn name(self) -> &'static str {
        match self {
            Block::All => "all",
            Block::Conv => "conv",
            Block::Ca => "ca",
            Block::Aspp => "aspp",
            Block::Net => "net",
            Block::Loss => "loss",
        }
    }

    pub fn tolerance(self) -> f64 {
        if self == Block::Net {
            NET_TOLERANCE
        } else {
            OP_TOLERANCE
        }
    }
}

pub struct Outcome {
    pub block: Block,
    pub max_error: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.max_error <= self.block.tolerance()
    }
}

pub fn run(block: Block) -> Result<Vec<Outcome>> {
    let blocks: Vec<Block> = if block == Block::All { Block::EACH.to_vec() } else { vec![block] };
    blocks
        .into_iter()
        .map(|b| {
            let max_error = match b {
                Block::Conv => conv()?,
                Block::Ca => attention()?,
                Block::Aspp => pyramid()?,
                Block::Net => network()?,
                Block::Loss => loss()?,
                Block::All => unreachable!(),
            };
            Ok(Outcome { block: b, max_error })
        })
        .collect()
}

fn random(shape: &[usize], rng: &mut SeededRng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(-scale, scale))
}

fn params(layout: &Layout, seed: u64) -> Parameters<f64> {
    let mut p = Parameters::<f64>::init(layout, seed);
    let mut rng = SeededRng::derived(seed, 7);
    for (name, t) in p.iter_mut() {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-0.2, 0.2));
        }
    }
    p
}

fn check_layout<F>(layout: &Layout, x: Tensor<f64>, probe: Probe, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &Bound, Var) -> Result<Var>,
{
    let p = params(layout, 5);
    let names: Vec<String> = p.names().iter().map(|s| s.to_string()).collect();
    let mut inputs = vec![x];
    inputs.extend(p.iter().map(|(_, t)| t.clone()));
    gradcheck_many(
        |tape, vars| f(tape, &Bound::new(names.clone(), vars[1..].to_vec()), vars[0]),
        &inputs,
        STEP,
        probe,
    )
}

fn conv() -> Result<f64> {
    let mut rng = SeededRng::new(1);
    let mut worst = 0.0f64;
    for (stride, pad, dil) in [(1, 1, 1), (2, 0, 1), (1, 2, 2)] {
        let inputs = [
            random(&[2, 2, 7, 7], &mut rng, 1.0),
            random(&[3, 2, 3, 3], &mut rng, 0.5),
            random(&[3], &mut rng, 0.5),
        ];
        let err = gradcheck_many(
            |t, v| t.conv2d(v[0], v[1], v[2], stride, pad, dil),
            &inputs,
            STEP,
            Probe::All,
        )?;
        worst = worst.max(err);
    }
    let inputs = [
        random(&[2, 3, 3, 3], &mut rng, 1.0),
        random(&[3, 2, 2, 2], &mut rng, 0.5),
        random(&[2], &mut rng, 0.5),
    ];
    worst = worst.max(gradcheck_many(|t, v| t.conv2d_transpose(v[0], v[1], v[2], 2), &inputs, STEP, Probe::All)?);
    let pooled = [random(&[1, 2, 6, 6], &mut rng, 1.0)];
    worst = worst.max(gradcheck_many(|t, v| t.maxpool2d(v[0], 2, 2), &pooled, STEP, Probe::All)?);

    let mut layout = Layout::default();
    double_conv_layout(&mut layout, "block", 2, 4);
    let x = random(&[1, 2, 6, 6], &mut rng, 1.0);
    worst = worst.max(check_layout(&layout, x, Probe::All, |t, p, x| {
        blocks::double_conv(t, p, "block", x)
    })?);
    Ok(worst)
}

fn attention() -> Result<f64> {
    let mut layout = Layout::default();
    coordinate_attention_layout(&mut layout, "ca", 8, 4);
    let x = random(&[2, 8, 5, 6], &mut SeededRng::new(2), 1.0);
    check_layout(&layout, x, Probe::All, |t, p, x| blocks::coordinate_attention(t, p, "ca", x))
}

fn pyramid() -> Result<f64> {
    let rates = [1, 2, 3];
    let mut layout = Layout::default();
    aspp_layout(&mut layout, "aspp", 8, rates.len());
    let x = random(&[1, 8, 8, 8], &mut SeededRng::new(3), 1.0);
    check_layout(&layout, x, Probe::All, |t, p, x| blocks::aspp(t, p, "aspp", x, &rates))
}

fn network() -> Result<f64> {
    let net = UNet::new(NetworkConfig::improved(4, 2))?;
    let x = random(&[1, 1, 16, 16], &mut SeededRng::new(4), 1.0);
    check_layout(&net.layout(), x, Probe::All, |t, p, x| net.forward(t, p, x))
}

fn loss() -> Result<f64> {
    let mut rng = SeededRng::new(5);
    let logits = random(&[2, 1, 4, 4], &mut rng, 2.0);
    let target = Tensor::from_fn(&[2, 1, 4, 4], |_| if rng.unit() < 0.4 { 1.0 } else { 0.0 });
    gradcheck_many(
        |t, v| {
            let pred = t.sigmoid(v[0])?;
            combined_loss(t, pred, &target)
        },
        &[logits],
        STEP,
        Probe::All,
    )
}
