//! Comma-separated outputs with `# key: value` metadata headers.
//!
//! Floats are written in Rust's shortest round-trip form, so
//! `parse(emit(x)) == x` holds bit for bit.

use std::collections::BTreeMap;

use super::IoError;
use crate::protocol::{BiasProbabilityCurve, CurvePoint};
use crate::reconstruct::{AxisGrid, MarginalQ, QGrid, Sinogram};

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), num)
}

/// Ordered metadata lines emitted before the table.
#[derive(Debug, Default, Clone)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new(kind: &str) -> Self {
        let mut h = Self::default();
        h.push("kind", kind);
        h
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string().replace(['\n', '\r'], " ");
        self.entries.push((key.to_string(), value));
        self
    }

    fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("# {k}: {v}\n"))
            .collect()
    }
}

fn write_table(header: &Header, columns: Option<&[&str]>, rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    if let Some(cols) = columns {
        w.write_record(cols).expect("in-memory write");
    }
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 table");
    header.render() + &body
}

/// Metadata and data rows of a parsed file.
struct Parsed {
    meta: BTreeMap<String, String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn parse_table(source: &str, text: &str, has_columns: bool) -> Result<Parsed, IoError> {
    let mut meta = BTreeMap::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim_start().split_once(':') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_columns)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            IoError::parse(
                source,
                e.position().map_or(0, |p| p.line() as usize),
                e.to_string(),
            )
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Parsed { meta, rows })
}

impl Parsed {
    fn get(&self, source: &str, key: &str) -> Result<&str, IoError> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| IoError::parse(source, 0, format!("missing header `{key}`")))
    }

    fn f64(&self, source: &str, key: &str) -> Result<f64, IoError> {
        parse_f64(source, 0, self.get(source, key)?)
    }

    fn opt_f64(&self, source: &str, key: &str) -> Result<Option<f64>, IoError> {
        match self.meta.get(key).map(String::as_str) {
            None | Some("none") => Ok(None),
            Some(v) => parse_f64(source, 0, v).map(Some),
        }
    }

    fn u64(&self, source: &str, key: &str) -> Result<u64, IoError> {
        parse_u64(source, 0, self.get(source, key)?)
    }

    fn expect_kind(&self, source: &str, kind: &str) -> Result<(), IoError> {
        let got = self.get(source, "kind")?;
        if got != kind {
            return Err(IoError::parse(
                source,
                0,
                format!("expected kind `{kind}`, found `{got}`"),
            ));
        }
        Ok(())
    }

    fn axis(&self, source: &str) -> Result<AxisGrid, IoError> {
        let len = self.u64(source, "axis_len")? as usize;
        AxisGrid::new(
            self.f64(source, "axis_start")?,
            self.f64(source, "axis_step")?,
            len,
        )
        .map_err(|e| IoError::parse(source, 0, e.to_string()))
    }
}

fn parse_f64(source: &str, line: usize, s: &str) -> Result<f64, IoError> {
    s.trim()
        .parse()
        .map_err(|_| IoError::parse(source, line, format!("expected a number, found `{s}`")))
}

fn parse_u64(source: &str, line: usize, s: &str) -> Result<u64, IoError> {
    s.trim()
        .parse()
        .map_err(|_| IoError::parse(source, line, format!("expected an integer, found `{s}`")))
}

fn parse_bool(source: &str, s: &str) -> Result<bool, IoError> {
    match s.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(IoError::parse(
            source,
            0,
            format!("expected true or false, found `{other}`"),
        )),
    }
}

fn check_width(source: &str, line: usize, row: &[String], want: usize) -> Result<(), IoError> {
    if row.len() != want {
        return Err(IoError::parse(
            source,
            line,
            format!("expected {want} columns, found {}", row.len()),
        ));
    }
    Ok(())
}

const CURVE_COLUMNS: [&str; 6] = ["b", "p_hat", "n", "n_positive", "ci_low", "ci_high"];

pub fn emit_curve(c: &BiasProbabilityCurve) -> String {
    let mut h = Header::new("bias_probability_curve");
    h.push("theta", num(c.theta))
        .push("tau0", num(c.tau0))
        .push("lambda", num(c.lambda))
        .push("n", c.points.first().map_or(0, |p| p.n))
        .push("seed", c.seed)
        .push("preparation", &c.preparation)
        .push("schedule", &c.schedule);
    let rows: Vec<Vec<String>> = c
        .points
        .iter()
        .map(|p| {
            vec![
                num(p.b),
                num(p.p_hat),
                p.n.to_string(),
                p.n_positive.to_string(),
                num(p.ci_low),
                num(p.ci_high),
            ]
        })
        .collect();
    write_table(&h, Some(&CURVE_COLUMNS), &rows)
}

pub fn parse_curve(source: &str, text: &str) -> Result<BiasProbabilityCurve, IoError> {
    let t = parse_table(source, text, true)?;
    t.expect_kind(source, "bias_probability_curve")?;
    let mut points = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        check_width(source, *line, r, CURVE_COLUMNS.len())?;
        points.push(CurvePoint {
            b: parse_f64(source, *line, &r[0])?,
            p_hat: parse_f64(source, *line, &r[1])?,
            n: parse_u64(source, *line, &r[2])?,
            n_positive: parse_u64(source, *line, &r[3])?,
            ci_low: parse_f64(source, *line, &r[4])?,
            ci_high: parse_f64(source, *line, &r[5])?,
        });
    }
    let curve = BiasProbabilityCurve {
        theta: t.f64(source, "theta")?,
        tau0: t.f64(source, "tau0")?,
        lambda: t.f64(source, "lambda")?,
        seed: t.u64(source, "seed")?,
        preparation: t.get(source, "preparation")?.to_string(),
        schedule: t.get(source, "schedule")?.to_string(),
        points,
    };
    curve
        .validate()
        .map_err(|e| IoError::parse(source, 0, e.to_string()))?;
    Ok(curve)
}

fn push_axis(h: &mut Header, a: &AxisGrid) {
    h.push("axis_start", num(a.start))
        .push("axis_step", num(a.step))
        .push("axis_len", a.len);
}

pub fn emit_marginal(m: &MarginalQ) -> String {
    let mut h = Header::new("marginal_q");
    h.push("theta", num(m.theta));
    push_axis(&mut h, &m.axis);
    h.push("normalized", m.normalized)
        .push("fit_variance", opt_num(m.fit_variance))
        .push("fit_variance_se", opt_num(m.fit_variance_se));
    let rows: Vec<Vec<String>> = (0..m.axis.len)
        .map(|i| vec![num(m.axis.value(i)), num(m.density[i])])
        .collect();
    write_table(&h, Some(&["x", "density"]), &rows)
}

pub fn parse_marginal(source: &str, text: &str) -> Result<MarginalQ, IoError> {
    let t = parse_table(source, text, true)?;
    t.expect_kind(source, "marginal_q")?;
    let axis = t.axis(source)?;
    if t.rows.len() != axis.len {
        return Err(IoError::parse(
            source,
            0,
            format!("expected {} rows, found {}", axis.len, t.rows.len()),
        ));
    }
    let mut density = Vec::with_capacity(axis.len);
    for (line, r) in &t.rows {
        check_width(source, *line, r, 2)?;
        density.push(parse_f64(source, *line, &r[1])?);
    }
    Ok(MarginalQ {
        theta: t.f64(source, "theta")?,
        axis,
        density,
        normalized: parse_bool(source, t.get(source, "normalized")?)?,
        fit_variance: t.opt_f64(source, "fit_variance")?,
        fit_variance_se: t.opt_f64(source, "fit_variance_se")?,
    })
}

fn join(values: impl Iterator<Item = String>) -> String {
    values.collect::<Vec<_>>().join(";")
}

/// A sinogram together with the measurement pump it was taken at, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct SinogramFile {
    pub sinogram: Sinogram,
    pub lambda: Option<f64>,
}

pub fn emit_sinogram(s: &Sinogram, lambda: Option<f64>) -> String {
    let mut h = Header::new("sinogram");
    h.push("id", &s.id).push("lambda", opt_num(lambda));
    push_axis(&mut h, &s.axis);
    let ms = &s.marginals;
    h.push("theta", join(ms.iter().map(|m| num(m.theta))))
        .push(
            "normalized",
            join(ms.iter().map(|m| m.normalized.to_string())),
        )
        .push(
            "fit_variance",
            join(ms.iter().map(|m| opt_num(m.fit_variance))),
        )
        .push(
            "fit_variance_se",
            join(ms.iter().map(|m| opt_num(m.fit_variance_se))),
        );
    let mut columns = vec!["x".to_string()];
    columns.extend((0..ms.len()).map(|i| format!("q{i}")));
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..s.axis.len)
        .map(|i| {
            let mut r = vec![num(s.axis.value(i))];
            r.extend(ms.iter().map(|m| num(m.density[i])));
            r
        })
        .collect();
    write_table(&h, Some(&cols), &rows)
}

pub fn parse_sinogram(source: &str, text: &str) -> Result<SinogramFile, IoError> {
    let t = parse_table(source, text, true)?;
    t.expect_kind(source, "sinogram")?;
    let axis = t.axis(source)?;
    let split = |key: &str| -> Result<Vec<String>, IoError> {
        Ok(t.get(source, key)?
            .split(';')
            .map(|v| v.trim().to_string())
            .collect())
    };
    let theta = split("theta")?;
    let normalized = split("normalized")?;
    let fit_variance = split("fit_variance")?;
    let fit_variance_se = split("fit_variance_se")?;
    let k = theta.len();
    if [normalized.len(), fit_variance.len(), fit_variance_se.len()]
        .iter()
        .any(|&l| l != k)
    {
        return Err(IoError::parse(
            source,
            0,
            "per-angle header lists differ in length",
        ));
    }
    if t.rows.len() != axis.len {
        return Err(IoError::parse(
            source,
            0,
            format!("expected {} rows, found {}", axis.len, t.rows.len()),
        ));
    }
    let mut columns = vec![Vec::with_capacity(axis.len); k];
    for (line, r) in &t.rows {
        check_width(source, *line, r, k + 1)?;
        for (j, col) in columns.iter_mut().enumerate() {
            col.push(parse_f64(source, *line, &r[j + 1])?);
        }
    }
    let opt = |s: &str| -> Result<Option<f64>, IoError> {
        if s == "none" {
            Ok(None)
        } else {
            parse_f64(source, 0, s).map(Some)
        }
    };
    let mut marginals = Vec::with_capacity(k);
    for (j, density) in columns.into_iter().enumerate() {
        marginals.push(MarginalQ {
            theta: parse_f64(source, 0, &theta[j])?,
            axis,
            density,
            normalized: parse_bool(source, &normalized[j])?,
            fit_variance: opt(&fit_variance[j])?,
            fit_variance_se: opt(&fit_variance_se[j])?,
        });
    }
    let sinogram = Sinogram::new(t.get(source, "id")?, marginals)
        .map_err(|e| IoError::parse(source, 0, e.to_string()))?;
    Ok(SinogramFile {
        sinogram,
        lambda: t.opt_f64(source, "lambda")?,
    })
}

pub fn emit_grid(g: &QGrid) -> String {
    let mut h = Header::new("q_grid");
    h.push("n", g.n)
        .push("cell", num(g.cell))
        .push(
            "axis",
            "x_i = y_i = (i - (n - 1) / 2) * cell; rows run along y, columns along x",
        )
        .push("source", &g.source)
        .push("clipped_fraction", num(g.clipped_fraction));
    let rows: Vec<Vec<String>> = (0..g.n)
        .map(|iy| (0..g.n).map(|ix| num(g.at(ix, iy))).collect())
        .collect();
    write_table(&h, None, &rows)
}

pub fn parse_grid(source: &str, text: &str) -> Result<QGrid, IoError> {
    let t = parse_table(source, text, false)?;
    t.expect_kind(source, "q_grid")?;
    let n = t.u64(source, "n")? as usize;
    if t.rows.len() != n {
        return Err(IoError::parse(
            source,
            0,
            format!("expected {n} rows, found {}", t.rows.len()),
        ));
    }
    let mut values = Vec::with_capacity(n * n);
    for (line, r) in &t.rows {
        check_width(source, *line, r, n)?;
        for v in r {
            values.push(parse_f64(source, *line, v)?);
        }
    }
    let g = QGrid {
        n,
        cell: t.f64(source, "cell")?,
        values,
        source: t.get(source, "source")?.to_string(),
        clipped_fraction: t.f64(source, "clipped_fraction")?,
    };
    g.validate()
        .map_err(|e| IoError::parse(source, 0, e.to_string()))?;
    Ok(g)
}

/// A free-form table with a metadata header, for metrics outputs.
pub fn emit_table(header: &Header, columns: &[&str], rows: &[Vec<String>]) -> String {
    write_table(header, Some(columns), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{wilson_interval, Z_95};
    use proptest::prelude::*;

    fn curve(bs: &[f64], ks: &[u64], n: u64) -> BiasProbabilityCurve {
        let points = bs
            .iter()
            .zip(ks)
            .map(|(&b, &k)| {
                let (ci_low, ci_high) = wilson_interval(k, n, Z_95);
                CurvePoint {
                    b,
                    p_hat: k as f64 / n as f64,
                    n,
                    n_positive: k,
                    ci_low,
                    ci_high,
                }
            })
            .collect();
        BiasProbabilityCurve {
            theta: 0.1,
            tau0: 0.5,
            lambda: 2.0,
            seed: u64::MAX,
            preparation: "sde_relaxation(lambda_prep=0.8,relax_time=20)".into(),
            schedule: "pump=[t>=0:lambda=2] axis=[t>=0:axis=0]".into(),
            points,
        }
    }

    #[test]
    fn rejects_wrong_kind_and_bad_numbers() {
        let c = curve(&[0.0, 1.0], &[5, 9], 10);
        let text = emit_curve(&c);
        assert!(parse_marginal("c.csv", &text).is_err());
        assert!(parse_curve("c.csv", &text.replacen("# tau0: 0.5", "# tau0: x", 1)).is_err());
        let short = text.replace(",10,9,", ",10,");
        assert!(matches!(
            parse_curve("c.csv", &short),
            Err(IoError::Parse { .. })
        ));
    }

    proptest! {
        #[test]
        fn curve_round_trip(
            start in -5.0f64..5.0,
            gaps in prop::collection::vec(1e-6f64..2.0, 1..20),
            n in 1u64..100_000,
            frac in prop::collection::vec(0.0f64..=1.0, 20),
        ) {
            let mut bs = vec![start];
            for g in &gaps {
                bs.push(bs.last().unwrap() + g);
            }
            let ks: Vec<u64> = bs.iter().enumerate().map(|(i, _)| (frac[i] * n as f64).floor() as u64).collect();
            let c = curve(&bs, &ks, n);
            prop_assert_eq!(parse_curve("c.csv", &emit_curve(&c)).unwrap(), c);
        }

        #[test]
        fn marginal_and_sinogram_round_trip(
            start in -10.0f64..0.0,
            step in 1e-3f64..1.0,
            dens in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 12), 1..6),
            fit in prop::option::of(1e-6f64..10.0),
        ) {
            let axis = AxisGrid::new(start, step, 12).unwrap();
            let k = dens.len();
            let marginals: Vec<MarginalQ> = dens
                .into_iter()
                .enumerate()
                .map(|(i, d)| {
                    let mut m = MarginalQ::new(std::f64::consts::PI * i as f64 / k as f64, axis, d).unwrap();
                    m.fit_variance = fit;
                    m.normalized = i % 2 == 0;
                    m
                })
                .collect();
            for m in &marginals {
                prop_assert_eq!(&parse_marginal("m.csv", &emit_marginal(m)).unwrap(), m);
            }
            let s = Sinogram::new("run 7", marginals).unwrap();
            let f = parse_sinogram("s.csv", &emit_sinogram(&s, fit)).unwrap();
            prop_assert_eq!(f.sinogram, s);
            prop_assert_eq!(f.lambda, fit);
        }

        #[test]
        fn grid_round_trip(
            n in 2usize..12,
            cell in 1e-3f64..2.0,
            seed in any::<u64>(),
            clipped in 0.0f64..0.5,
        ) {
            let mut g = QGrid::from_fn(n, cell, "sino-1", |x, y| {
                ((x * 1.7 + y * 0.3 + (seed % 97) as f64).sin()).abs() * 1e-3
            });
            g.clipped_fraction = clipped;
            prop_assert_eq!(parse_grid("g.csv", &emit_grid(&g)).unwrap(), g);
        }
    }
}
