//! Acceptor phase field on the mesh and the quantities derived from it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{ElementGeometry, Mesh};
use crate::physics::ModelParams;

/// Values this far outside [0, 1] are clamped on load instead of rejected.
const CLAMP_SLACK: f64 = 1e-9;

/// Nodal acceptor volume fraction, `0 <= phi <= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    values: Vec<f64>,
}

impl PhaseField {
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return Err(Error::PhaseField(format!(
                "{} values for a mesh with {} nodes",
                values.len(),
                mesh.n_nodes()
            )));
        }
        let mut values = values;
        for (i, v) in values.iter_mut().enumerate() {
            if !v.is_finite() || *v < -CLAMP_SLACK || *v > 1.0 + CLAMP_SLACK {
                return Err(Error::PhaseField(format!("value {v} at node {i} outside [0, 1]")));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fraction of nodes with `phi > 0.5`.
    pub fn acceptor_fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v > 0.5).count() as f64 / self.values.len() as f64
    }
}

/// Nodal `|grad phi|`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceField {
    pub values: Vec<f64>,
}

/// Nodal LUMO (`lumo`) and HOMO (`homo`) levels in thermal units.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLevels {
    pub lumo: Vec<f64>,
    pub homo: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticKind {
    Uniform {
        value: f64,
    },
    /// Acceptor above `split` (vertical coordinate), donor below.
    Bilayer {
        split: f64,
    },
    /// Alternating pure blocks of side `period`.
    Checkerboard {
        period: f64,
    },
    /// Smoothed, thresholded noise with the given acceptor fraction.
    SmoothedNoise {
        seed: u64,
        blend_ratio: f64,
        smoothing_passes: usize,
    },
}

impl SyntheticKind {
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        let bad = |m: String| Err(Error::PhaseField(m));
        match *self {
            SyntheticKind::Uniform { value } if !(0.0..=1.0).contains(&value) => {
                bad(format!("uniform value {value} outside [0, 1]"))
            }
            SyntheticKind::Bilayer { split } if !(split > 0.0 && split < mesh.height()) => {
                bad(format!("bilayer split {split} outside (0, {})", mesh.height()))
            }
            SyntheticKind::Checkerboard { period } if !(period > 0.0 && period.is_finite()) => {
                bad(format!("checkerboard period {period} must be positive"))
            }
            SyntheticKind::SmoothedNoise { blend_ratio, .. }
                if !(blend_ratio > 0.0 && blend_ratio < 1.0) =>
            {
                bad(format!("blend ratio {blend_ratio} outside (0, 1)"))
            }
            _ => Ok(()),
        }
    }
}

pub fn generate_synthetic(kind: &SyntheticKind, mesh: &Mesh) -> Result<PhaseField> {
    kind.validate(mesh)?;
    let n = mesh.n_nodes();
    let values = match *kind {
        SyntheticKind::Uniform { value } => vec![value; n],
        SyntheticKind::Bilayer { split } => (0..n)
            .map(|i| if mesh.height_of(i) > split { 1.0 } else { 0.0 })
            .collect(),
        SyntheticKind::Checkerboard { period } => (0..n)
            .map(|i| {
                let parity: i64 = mesh
                    .vertex(i)
                    .iter()
                    .zip(mesh.extent())
                    .map(|(&x, &e)| {
                        // the far face belongs to the last block
                        let b = (x / period).floor() as i64;
                        let last = ((e / period).ceil() as i64 - 1).max(0);
                        b.min(last)
                    })
                    .sum();
                if parity.rem_euclid(2) == 1 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect(),
        SyntheticKind::SmoothedNoise {
            seed,
            blend_ratio,
            smoothing_passes,
        } => smoothed_noise(mesh, seed, blend_ratio, smoothing_passes),
    };
    PhaseField::new(mesh, values)
}

fn smoothed_noise(mesh: &Mesh, seed: u64, ratio: f64, passes: usize) -> Vec<f64> {
    let n = mesh.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();

    let counts = mesh.counts().to_vec();
    let strides: Vec<usize> = (0..counts.len())
        .map(|a| counts[..a].iter().product())
        .collect();
    let mut next = vec![0.0; n];
    for _ in 0..passes {
        for (i, out) in next.iter_mut().enumerate() {
            let mut sum = field[i];
            let mut w = 1.0;
            for (a, &stride) in strides.iter().enumerate() {
                let pos = (i / stride) % counts[a];
                if pos > 0 {
                    sum += field[i - stride];
                    w += 1.0;
                }
                if pos + 1 < counts[a] {
                    sum += field[i + stride];
                    w += 1.0;
                }
            }
            *out = sum / w;
        }
        std::mem::swap(&mut field, &mut next);
    }

    // threshold at the (1 - ratio) quantile, then map to a diffuse profile of
    // width proportional to the field spread so that phi > 0.5 iff above it
    let mut sorted = field.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let k = (((1.0 - ratio) * n as f64).round() as usize).min(n - 1);
    let threshold = if k == 0 {
        sorted[0] - 1.0
    } else {
        0.5 * (sorted[k - 1] + sorted[k])
    };
    let mean = field.iter().sum::<f64>() / n as f64;
    let std = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let width = 0.5 * std.max(f64::MIN_POSITIVE);
    field
        .iter()
        .map(|&v| {
            let s = 0.5 + (v - threshold) / width;
            if v > threshold {
                s.clamp(0.5 + f64::EPSILON, 1.0)
            } else {
                s.clamp(0.0, 0.5)
            }
        })
        .collect()
}

/// Volume-weighted nodal average of the elementwise P1 gradient magnitude.
pub fn interface_indicator(mesh: &Mesh, geometry: &[ElementGeometry], phi: &PhaseField) -> InterfaceField {
    let n = mesh.n_nodes();
    let mut acc = vec![0.0; n];
    let mut weight = vec![0.0; n];
    let dim = mesh.dim();
    for (cell, g) in mesh.cells().zip(geometry) {
        let mut grad = [0.0; 3];
        for (k, &node) in cell.iter().enumerate() {
            for a in 0..dim {
                grad[a] += phi.values[node] * g.grads[k][a];
            }
        }
        let mag = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        for &node in cell {
            acc[node] += g.volume * mag;
            weight[node] += g.volume;
        }
    }
    let values = acc
        .iter()
        .zip(&weight)
        .map(|(a, w)| if *w > 0.0 { a / w } else { 0.0 })
        .collect();
    InterfaceField { values }
}

pub fn energy_levels(phi: &PhaseField, params: &ModelParams) -> EnergyLevels {
    let interp = |donor: f64, acceptor: f64| -> Vec<f64> {
        phi.values
            .iter()
            .map(|&f| donor + (acceptor - donor) * f)
            .collect()
    };
    EnergyLevels {
        lumo: interp(params.e_lumo_donor, params.e_lumo_acceptor),
        homo: interp(params.e_homo_donor, params.e_homo_acceptor),
    }
}

/// Reads a PHF morphology file onto `mesh`.
pub fn load_phase_field(path: &Path, mesh: &Mesh) -> Result<PhaseField> {
    let text = fs::read_to_string(path)?;
    parse_phf(&text, mesh).map_err(|e| match e {
        Error::PhaseField(message) => Error::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn parse_phf(text: &str, mesh: &Mesh) -> Result<PhaseField> {
    let bad = |m: String| Error::PhaseField(m);
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());

    let (_, header) = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let mut it = header.split_whitespace();
    if it.next() != Some("PHF1") {
        return Err(bad(format!("malformed header {header:?}")));
    }
    let dim: usize = it
        .next()
        .and_then(|d| d.parse().ok())
        .filter(|d| *d == 2 || *d == 3)
        .ok_or_else(|| bad(format!("malformed header {header:?}")))?;
    if it.next().is_some() {
        return Err(bad(format!("malformed header {header:?}")));
    }

    let (_, counts_line) = lines.next().ok_or_else(|| bad("missing node counts".into()))?;
    let counts: Vec<usize> = counts_line
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad(format!("malformed node counts {counts_line:?}")))?;
    let (_, extent_line) = lines.next().ok_or_else(|| bad("missing extents".into()))?;
    let extent: Vec<f64> = extent_line
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad(format!("malformed extents {extent_line:?}")))?;
    if counts.len() != dim || extent.len() != dim {
        return Err(bad(format!("header declares {dim}D but lists {} counts", counts.len())));
    }

    if dim != mesh.dim() || counts != mesh.counts() {
        return Err(bad(format!(
            "dimension mismatch: file grid {counts:?}, mesh grid {:?}",
            mesh.counts()
        )));
    }
    for (e, m) in extent.iter().zip(mesh.extent()) {
        if (e - m).abs() > 1e-9 * m.abs().max(1.0) {
            return Err(bad(format!(
                "dimension mismatch: file extent {extent:?}, mesh extent {:?}",
                mesh.extent()
            )));
        }
    }

    let mut values = Vec::with_capacity(mesh.n_nodes());
    for (lineno, line) in lines {
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|_| bad(format!("line {}: malformed value {line:?}", lineno + 1)))?;
        values.push(v);
    }
    if values.len() != mesh.n_nodes() {
        return Err(bad(format!(
            "dimension mismatch: {} values, expected {}",
            values.len(),
            mesh.n_nodes()
        )));
    }
    PhaseField::new(mesh, values)
}

pub fn format_phf(mesh: &Mesh, phi: &PhaseField) -> String {
    let mut out = String::with_capacity(phi.len() * 20 + 64);
    let join = |v: Vec<String>| v.join(" ");
    let _ = writeln!(out, "PHF1 {}", mesh.dim());
    let _ = writeln!(out, "{}", join(mesh.counts().iter().map(|c| c.to_string()).collect()));
    let _ = writeln!(out, "{}", join(mesh.extent().iter().map(|e| format!("{e:?}")).collect()));
    for v in phi.values() {
        let _ = writeln!(out, "{v:?}");
    }
    out
}

pub fn write_phase_field(path: &Path, mesh: &Mesh, phi: &PhaseField) -> Result<()> {
    fs::write(path, format_phf(mesh, phi))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;

    fn mesh(n: usize) -> Mesh {
        build_structured_mesh(&[10.0, 10.0], &[n, n]).unwrap()
    }

    #[test]
    fn bilayer_file_loads() {
        let m = mesh(2);
        let phi = parse_phf("PHF1 2\n2 2\n10 10\n0\n0\n1\n1\n", &m).unwrap();
        assert_eq!(phi.values(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn load_errors() {
        let m = mesh(200);
        let small = "PHF1 2\n3 3\n10 10\n".to_string() + &"0.5\n".repeat(9);
        assert!(matches!(parse_phf(&small, &m), Err(Error::PhaseField(s)) if s.contains("dimension mismatch")));

        let m = mesh(2);
        let out = parse_phf("PHF1 2\n2 2\n10 10\n0\n1.5\n1\n1\n", &m);
        assert!(matches!(out, Err(Error::PhaseField(s)) if s.contains("outside")));
        assert!(parse_phf("PHF2 2\n2 2\n10 10\n0\n0\n1\n1\n", &m).is_err());
        assert!(parse_phf("PHF1 2\n2 x\n10 10\n0\n0\n1\n1\n", &m).is_err());

        // tiny excursions are clamped
        let phi = parse_phf("PHF1 2\n2 2\n10 10\n-1e-12\n0\n1\n1.0000000001\n", &m).unwrap();
        assert_eq!(phi.values(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn phf_round_trip_is_exact() {
        let m = mesh(17);
        let kind = SyntheticKind::SmoothedNoise {
            seed: 3,
            blend_ratio: 0.4,
            smoothing_passes: 4,
        };
        let phi = generate_synthetic(&kind, &m).unwrap();
        let back = parse_phf(&format_phf(&m, &phi), &m).unwrap();
        assert_eq!(back, phi);
    }

    #[test]
    fn synthetic_generators() {
        let m = mesh(11);
        let phi = generate_synthetic(&SyntheticKind::Uniform { value: 0.5 }, &m).unwrap();
        assert!(phi.values().iter().all(|&v| v == 0.5));

        let phi = generate_synthetic(&SyntheticKind::Bilayer { split: 5.0 }, &m).unwrap();
        for i in 0..m.n_nodes() {
            let y = m.height_of(i);
            if y < 5.0 {
                assert_eq!(phi.values()[i], 0.0);
            } else if y > 5.0 {
                assert_eq!(phi.values()[i], 1.0);
            }
        }

        let phi = generate_synthetic(&SyntheticKind::Checkerboard { period: 5.0 }, &m).unwrap();
        let at = |x: usize, y: usize| phi.values()[x + 11 * y];
        assert_eq!(at(0, 0), 0.0);
        assert_eq!(at(6, 0), 1.0);
        assert_eq!(at(6, 6), 0.0);
        assert_eq!(at(10, 10), 0.0);

        assert!(generate_synthetic(&SyntheticKind::Uniform { value: 1.5 }, &m).is_err());
        assert!(generate_synthetic(&SyntheticKind::Bilayer { split: 10.0 }, &m).is_err());
        assert!(generate_synthetic(&SyntheticKind::Checkerboard { period: 0.0 }, &m).is_err());
        let bad = SyntheticKind::SmoothedNoise {
            seed: 1,
            blend_ratio: 1.0,
            smoothing_passes: 1,
        };
        assert!(generate_synthetic(&bad, &m).is_err());
    }

    #[test]
    fn smoothed_noise_matches_blend_ratio() {
        let m = mesh(200);
        let kind = SyntheticKind::SmoothedNoise {
            seed: 7,
            blend_ratio: 0.5,
            smoothing_passes: 10,
        };
        let phi = generate_synthetic(&kind, &m).unwrap();
        let f = phi.acceptor_fraction();
        assert!((0.48..=0.52).contains(&f), "fraction {f}");
        let again = generate_synthetic(&kind, &m).unwrap();
        assert_eq!(phi, again);
        assert!(phi.values().iter().any(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn indicator_of_linear_and_uniform_fields() {
        let m = mesh(11);
        let geo = m.geometries().unwrap();
        let values = (0..m.n_nodes()).map(|i| m.vertex(i)[0] / 10.0).collect();
        let ind = interface_indicator(&m, &geo, &PhaseField::new(&m, values).unwrap());
        assert!(ind.values.iter().all(|v| (v - 0.1).abs() < 1e-12));

        let uniform = PhaseField::new(&m, vec![0.3; m.n_nodes()]).unwrap();
        let ind = interface_indicator(&m, &geo, &uniform);
        assert!(ind.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indicator_of_a_sharp_bilayer() {
        // jump between rows 4 and 5 of an 11x11 grid, h = 1
        let m = mesh(11);
        let geo = m.geometries().unwrap();
        let phi = generate_synthetic(&SyntheticKind::Bilayer { split: 4.5 }, &m).unwrap();
        let ind = interface_indicator(&m, &geo, &phi);
        let h = 1.0;
        for i in 1..10 {
            for (row, expect) in [(3, 0.0), (4, 0.5 / h), (5, 0.5 / h), (6, 0.0)] {
                let v = ind.values[i + 11 * row];
                assert!((v - expect).abs() < 1e-12, "row {row}: {v}");
            }
        }
    }

    #[test]
    fn energy_level_endpoints() {
        let params = ModelParams::default();
        let m = mesh(2);
        let lv = |v| energy_levels(&PhaseField::new(&m, vec![v; 4]).unwrap(), &params);
        let one = lv(1.0);
        assert_eq!((one.lumo[0], one.homo[0]), (-4.10, -5.65));
        let zero = lv(0.0);
        assert_eq!((zero.lumo[0], zero.homo[0]), (-3.28, -5.13));
        let half = lv(0.5);
        assert!((half.lumo[0] + 3.69).abs() < 1e-12);
        assert!((half.homo[0] + 5.39).abs() < 1e-12);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::mesh::build_structured_mesh;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn indicator_symmetric_under_complement(vals in proptest::collection::vec(0.0f64..=1.0, 25)) {
            let m = build_structured_mesh(&[4.0, 4.0], &[5, 5]).unwrap();
            let geo = m.geometries().unwrap();
            let a = interface_indicator(&m, &geo, &PhaseField::new(&m, vals.clone()).unwrap());
            let flipped = vals.iter().map(|v| 1.0 - v).collect();
            let b = interface_indicator(&m, &geo, &PhaseField::new(&m, flipped).unwrap());
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!(*x >= 0.0);
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn levels_affine_and_bounded(
            v1 in proptest::collection::vec(0.0f64..=1.0, 4),
            v2 in proptest::collection::vec(0.0f64..=1.0, 4),
            a in 0.0f64..=1.0,
        ) {
            let m = build_structured_mesh(&[1.0, 1.0], &[2, 2]).unwrap();
            let p = ModelParams::default();
            let mix: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| a * x + (1.0 - a) * y).collect();
            let l1 = energy_levels(&PhaseField::new(&m, v1).unwrap(), &p);
            let l2 = energy_levels(&PhaseField::new(&m, v2).unwrap(), &p);
            let lm = energy_levels(&PhaseField::new(&m, mix).unwrap(), &p);
            for i in 0..4 {
                prop_assert!((lm.lumo[i] - (a * l1.lumo[i] + (1.0 - a) * l2.lumo[i])).abs() < 1e-12);
                prop_assert!((lm.homo[i] - (a * l1.homo[i] + (1.0 - a) * l2.homo[i])).abs() < 1e-12);
                prop_assert!(lm.lumo[i] >= p.e_lumo_acceptor - 1e-12 && lm.lumo[i] <= p.e_lumo_donor + 1e-12);
                prop_assert!(lm.homo[i] >= p.e_homo_acceptor - 1e-12 && lm.homo[i] <= p.e_homo_donor + 1e-12);
                prop_assert!(lm.lumo[i] > lm.homo[i]);
            }
        }
    }
}
