//! Analytic potential-energy surfaces for smoke tests and small
//! experiments: a Morse pair potential, a dimer dataset and a two-regime
//! cluster task (compact in-distribution geometries, stretched
//! out-of-distribution ones).

use crate::geometry::AtomicStructure;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `E(r) = D[(1 − e^{−a(r − r0)})² − 1]` summed over all pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Morse {
    /// well depth, eV
    pub d: f64,
    /// width, 1/Å
    pub a: f64,
    /// equilibrium distance, Å
    pub r0: f64,
}

impl Default for Morse {
    fn default() -> Self {
        Morse {
            d: 0.5,
            a: 1.5,
            r0: 1.5,
        }
    }
}

impl Morse {
    pub fn pair(&self, r: f64) -> (f64, f64) {
        let x = (-self.a * (r - self.r0)).exp();
        let e = self.d * ((1.0 - x) * (1.0 - x) - 1.0);
        let de = 2.0 * self.d * self.a * (1.0 - x) * x;
        (e, de)
    }

    /// Total energy and forces of an isolated cluster.
    pub fn energy_forces(&self, pos: &[[f64; 3]]) -> (f64, Vec<[f64; 3]>) {
        let mut e = 0.0;
        let mut f = vec![[0.0; 3]; pos.len()];
        for i in 0..pos.len() {
            for j in i + 1..pos.len() {
                let d: [f64; 3] = std::array::from_fn(|k| pos[j][k] - pos[i][k]);
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                let (ep, de) = self.pair(r);
                e += ep;
                for k in 0..3 {
                    // F_i = −∂E/∂r_i = dE/dr · d/r
                    f[i][k] += de * d[k] / r;
                    f[j][k] -= de * d[k] / r;
                }
            }
        }
        (e, f)
    }

    pub fn label(&self, s: AtomicStructure) -> AtomicStructure {
        let (e, f) = self.energy_forces(&s.positions);
        s.with_labels(Some(e), Some(f))
    }
}

fn unit_vector(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-8 {
            return v.map(|x| x / n);
        }
    }
}

pub const DIMER_SPECIES: u32 = 1;

/// `n` labelled dimers with separations uniform in `[r_min, r_max]` and
/// random orientations.
pub fn morse_dimer_dataset(
    pot: &Morse,
    n: usize,
    (r_min, r_max): (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Vec<AtomicStructure> {
    (0..n)
        .map(|_| {
            let r = rng.random_range(r_min..r_max);
            let u = unit_vector(rng);
            let pos = vec![u.map(|x| -0.5 * r * x), u.map(|x| 0.5 * r * x)];
            let s = AtomicStructure::molecule(pos, vec![DIMER_SPECIES; 2]).expect("two atoms");
            pot.label(s)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// near-equilibrium tetrahedra
    InDistribution,
    /// uniformly stretched, more strongly distorted tetrahedra
    OutOfDistribution,
}

/// One 4-atom cluster from the requested regime, labelled by `pot`.
pub fn cluster(pot: &Morse, regime: Regime, rng: &mut ChaCha8Rng) -> AtomicStructure {
    let (scale, noise) = match regime {
        Regime::InDistribution => (rng.random_range(0.95..1.05), 0.05),
        Regime::OutOfDistribution => (rng.random_range(1.25..1.45), 0.12),
    };
    let edge = pot.r0 * scale;
    let c = edge / (2.0 * 2f64.sqrt());
    let base = [[c, c, c], [c, -c, -c], [-c, c, -c], [-c, -c, c]];
    let pos: Vec<[f64; 3]> = base
        .iter()
        .map(|p| {
            let z: [f64; 3] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal));
            std::array::from_fn(|k| p[k] + noise * z[k])
        })
        .collect();
    let s = AtomicStructure::molecule(pos, vec![DIMER_SPECIES; 4]).expect("four atoms");
    pot.label(s)
}

/// Initial training set (in-distribution only), a mixed pool and an
/// out-of-distribution test set.
#[derive(Clone, Debug)]
pub struct TwoRegimeTask {
    pub train: Vec<AtomicStructure>,
    pub pool: Vec<AtomicStructure>,
    pub test: Vec<AtomicStructure>,
}

pub fn two_regime_task(
    pot: &Morse,
    n_train: usize,
    (n_pool_id, n_pool_ood): (usize, usize),
    n_test: usize,
    rng: &mut ChaCha8Rng,
) -> TwoRegimeTask {
    let train = (0..n_train)
        .map(|_| cluster(pot, Regime::InDistribution, rng))
        .collect();
    let mut pool: Vec<AtomicStructure> = (0..n_pool_id)
        .map(|_| cluster(pot, Regime::InDistribution, rng))
        .collect();
    pool.extend((0..n_pool_ood).map(|_| cluster(pot, Regime::OutOfDistribution, rng)));
    use rand::seq::SliceRandom;
    pool.shuffle(rng);
    let test = (0..n_test)
        .map(|_| cluster(pot, Regime::OutOfDistribution, rng))
        .collect();
    TwoRegimeTask { train, pool, test }
}
