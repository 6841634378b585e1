//! Plain-text model files.
//!
//! ```text
//! format,taildep-model,1
//! kind,triangular
//! law,normal
//! a,4.0
//! reduced,false
//! param,row,col,value
//! mu,0,,0.0
//! sigma,0,0,1.0
//! ...
//! ```
//!
//! Header lines are `key,value...` pairs up to the `param,row,col,value`
//! line; every later line is one parameter entry. Values are written with the
//! shortest representation that parses back to the same `f64`, so a
//! write/read cycle is exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::baselines::{BaselineKind, BaselineModel, FactorAsset, FactorBaseline, QuantileTable};
use crate::dependence::{AssetParams, JointSampler, MarketParams, OneFactorModel, TriangularModel};
use crate::error::{Error, Result};
use crate::htqf::LatentLaw;

pub const FORMAT_LINE: &str = "format,taildep-model,1";
pub const TABLE_HEADER: &str = "param,row,col,value";

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Triangular(TriangularModel),
    OneFactor(OneFactorModel),
    Baseline(BaselineModel),
}

impl ModelFile {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelFile::Triangular(_) => "triangular",
            ModelFile::OneFactor(_) => "onefactor",
            ModelFile::Baseline(b) => b.kind().as_str(),
        }
    }
}

impl JointSampler for ModelFile {
    fn dim(&self) -> usize {
        match self {
            ModelFile::Triangular(m) => m.dim(),
            ModelFile::OneFactor(m) => m.n_assets() + 1,
            ModelFile::Baseline(m) => m.dim(),
        }
    }

    fn sample(&self, n_obs: usize, seed: u64) -> Result<DMatrix<f64>> {
        match self {
            ModelFile::Triangular(m) => m.sample(n_obs, seed),
            ModelFile::OneFactor(m) => m.sample(n_obs, seed),
            ModelFile::Baseline(m) => m.sample(n_obs, seed),
        }
    }
}

struct Writer {
    out: String,
}

impl Writer {
    fn new(kind: &str) -> Self {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_LINE}");
        let _ = writeln!(out, "kind,{kind}");
        Writer { out }
    }

    fn header(&mut self, key: &str, value: &str) {
        let _ = writeln!(self.out, "{key},{value}");
    }

    fn begin_table(&mut self) {
        let _ = writeln!(self.out, "{TABLE_HEADER}");
    }

    fn entry(&mut self, name: &str, row: Option<usize>, col: Option<usize>, value: f64) {
        let idx = |i: Option<usize>| i.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(self.out, "{name},{},{},{value:?}", idx(row), idx(col));
    }

    fn matrix(&mut self, name: &str, m: &DMatrix<f64>, lower_only: bool) {
        for i in 0..m.nrows() {
            let cols = if lower_only { i + 1 } else { m.ncols() };
            for j in 0..cols {
                self.entry(name, Some(i), Some(j), m[(i, j)]);
            }
        }
    }
}

fn law_string(law: LatentLaw) -> String {
    match law {
        LatentLaw::StandardNormal => "normal".into(),
        LatentLaw::StudentT { df } => format!("student-t,{df:?}"),
    }
}

/// Serializes a model.
pub fn write_model(model: &ModelFile) -> String {
    let mut w = Writer::new(model.kind_name());
    match model {
        ModelFile::Triangular(m) => {
            w.header("law", &law_string(m.law));
            w.header("a", &format!("{:?}", m.a));
            w.header("reduced", &m.reduced.to_string());
            w.begin_table();
            for (i, mu) in m.mu.iter().enumerate() {
                w.entry("mu", Some(i), None, *mu);
            }
            w.matrix("sigma", &m.sigma, true);
            w.matrix("u", &m.u, true);
            w.matrix("v", &m.v, true);
        }
        ModelFile::OneFactor(m) => {
            w.header("law", &law_string(m.law));
            w.header("a", &format!("{:?}", m.a));
            w.begin_table();
            let mk = &m.market;
            for (name, v) in [("alpha", mk.alpha), ("beta", mk.beta), ("u", mk.u), ("v", mk.v)] {
                w.entry(name, Some(0), None, v);
            }
            for (k, a) in m.assets.iter().enumerate() {
                let r = Some(k + 1);
                for (name, v) in [
                    ("alpha", a.alpha),
                    ("beta", a.beta),
                    ("u_m", a.u_m),
                    ("v_m", a.v_m),
                    ("gamma", a.gamma),
                    ("u", a.u),
                    ("v", a.v),
                ] {
                    w.entry(name, r, None, v);
                }
            }
        }
        ModelFile::Baseline(b) => {
            w.begin_table();
            match b {
                BaselineModel::MvNormal { mean, cov } => {
                    vector(&mut w, "mean", mean);
                    w.matrix("cov", cov, false);
                }
                BaselineModel::MvT { mean, scale, df } => {
                    vector(&mut w, "mean", mean);
                    w.matrix("scale", scale, false);
                    w.entry("df", None, None, *df);
                }
                BaselineModel::Clayton { theta, marginals } | BaselineModel::Gumbel { theta, marginals } => {
                    w.entry("theta", None, None, *theta);
                    for (c, m) in marginals.iter().enumerate() {
                        for (i, v) in m.values().iter().enumerate() {
                            w.entry("marginal", Some(i), Some(c), *v);
                        }
                    }
                }
                BaselineModel::OneFactorGaussian(f) | BaselineModel::OneFactorT(f) => {
                    w.entry("market_mean", None, None, f.market_mean);
                    w.entry("market_sd", None, None, f.market_sd);
                    if let Some(df) = f.market_df {
                        w.entry("market_df", None, None, df);
                    }
                    for (k, a) in f.assets.iter().enumerate() {
                        let r = Some(k + 1);
                        w.entry("alpha", r, None, a.alpha);
                        w.entry("loading", r, None, a.loading);
                        w.entry("idio_sd", r, None, a.idio_sd);
                        if let Some(df) = a.df {
                            w.entry("df", r, None, df);
                        }
                    }
                }
            }
        }
    }
    w.out
}

fn vector(w: &mut Writer, name: &str, v: &DVector<f64>) {
    for (i, x) in v.iter().enumerate() {
        w.entry(name, Some(i), None, *x);
    }
}

type Key = (String, Option<usize>, Option<usize>);

struct Parsed {
    header: BTreeMap<String, (usize, Vec<String>)>,
    entries: BTreeMap<Key, f64>,
    last_line: usize,
}

fn fmt_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Format { line, msg: msg.into() }
}

fn parse_index(s: &str, line: usize) -> Result<Option<usize>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| fmt_err(line, format!("bad index `{s}`")))
    }
}

fn parse_float(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| fmt_err(line, format!("bad number `{s}`")))
}

fn parse(text: &str) -> Result<Parsed> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, l)) if l == FORMAT_LINE => {}
        Some((n, l)) => return Err(fmt_err(n, format!("expected `{FORMAT_LINE}`, found `{l}`"))),
        None => return Err(fmt_err(1, "empty model file")),
    }
    let mut header = BTreeMap::new();
    let mut in_table = false;
    let mut entries = BTreeMap::new();
    let mut last_line = 1;
    for (n, l) in lines {
        last_line = n;
        if l.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split(',').collect();
        if !in_table {
            if l == TABLE_HEADER {
                in_table = true;
                continue;
            }
            let key = fields[0].to_string();
            let rest = fields[1..].iter().map(|s| s.to_string()).collect();
            if header.insert(key.clone(), (n, rest)).is_some() {
                return Err(fmt_err(n, format!("duplicate header `{key}`")));
            }
            continue;
        }
        if fields.len() != 4 {
            return Err(fmt_err(n, format!("expected 4 fields, found {}", fields.len())));
        }
        let key = (fields[0].to_string(), parse_index(fields[1], n)?, parse_index(fields[2], n)?);
        let value = parse_float(fields[3], n)?;
        if entries.insert(key, value).is_some() {
            return Err(fmt_err(n, format!("duplicate entry `{l}`")));
        }
    }
    if !in_table {
        return Err(fmt_err(last_line, format!("missing `{TABLE_HEADER}` line")));
    }
    Ok(Parsed {
        header,
        entries,
        last_line,
    })
}

impl Parsed {
    fn head(&self, key: &str) -> Result<(usize, &[String])> {
        self.header
            .get(key)
            .map(|(n, v)| (*n, v.as_slice()))
            .ok_or_else(|| fmt_err(self.last_line, format!("missing header `{key}`")))
    }

    fn head_f64(&self, key: &str) -> Result<f64> {
        let (n, v) = self.head(key)?;
        parse_float(v.first().map(String::as_str).unwrap_or(""), n)
    }

    fn law(&self) -> Result<LatentLaw> {
        let (n, v) = self.head("law")?;
        match v.first().map(String::as_str) {
            Some("normal") => Ok(LatentLaw::StandardNormal),
            Some("student-t") => Ok(LatentLaw::StudentT {
                df: parse_float(v.get(1).map(String::as_str).unwrap_or(""), n)?,
            }),
            other => Err(fmt_err(n, format!("unknown law {other:?}"))),
        }
    }

    fn get(&self, name: &str, row: Option<usize>, col: Option<usize>) -> Result<f64> {
        self.entries
            .get(&(name.to_string(), row, col))
            .copied()
            .ok_or_else(|| fmt_err(self.last_line, format!("missing entry {name}[{row:?},{col:?}]")))
    }

    fn has(&self, name: &str, row: Option<usize>, col: Option<usize>) -> bool {
        self.entries.contains_key(&(name.to_string(), row, col))
    }

    /// Count of consecutive rows `0..` present for `name` with column `col`.
    fn rows(&self, name: &str, col: Option<usize>) -> usize {
        (0..).take_while(|&i| self.has(name, Some(i), col)).count()
    }

    fn vector(&self, name: &str) -> Result<Vec<f64>> {
        (0..self.rows(name, None)).map(|i| self.get(name, Some(i), None)).collect()
    }

    fn lower(&self, name: &str, n: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                m[(i, j)] = self.get(name, Some(i), Some(j))?;
            }
        }
        Ok(m)
    }

    fn full(&self, name: &str, n: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.get(name, Some(i), Some(j))?;
            }
        }
        Ok(m)
    }
}

/// Parses a model file; every failure carries the offending line.
pub fn read_model(text: &str) -> Result<ModelFile> {
    let p = parse(text)?;
    let (kline, kind) = p.head("kind")?;
    let kind = kind.first().map(String::as_str).unwrap_or("");
    let model = match kind {
        "triangular" => {
            let mu = p.vector("mu")?;
            let n = mu.len();
            let (rline, r) = p.head("reduced")?;
            let reduced = match r.first().map(String::as_str) {
                Some("true") => true,
                Some("false") => false,
                other => return Err(fmt_err(rline, format!("bad flag {other:?}"))),
            };
            ModelFile::Triangular(TriangularModel::new(
                mu,
                p.lower("sigma", n)?,
                p.lower("u", n)?,
                p.lower("v", n)?,
                p.head_f64("a")?,
                p.law()?,
                reduced,
            )?)
        }
        "onefactor" => {
            let g = |name: &str, r: usize| p.get(name, Some(r), None);
            let market = MarketParams {
                alpha: g("alpha", 0)?,
                beta: g("beta", 0)?,
                u: g("u", 0)?,
                v: g("v", 0)?,
            };
            let n = p.rows("alpha", None) - 1;
            let assets = (1..=n)
                .map(|r| {
                    Ok(AssetParams {
                        alpha: g("alpha", r)?,
                        beta: g("beta", r)?,
                        u_m: g("u_m", r)?,
                        v_m: g("v_m", r)?,
                        gamma: g("gamma", r)?,
                        u: g("u", r)?,
                        v: g("v", r)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ModelFile::OneFactor(OneFactorModel::new(market, assets, p.head_f64("a")?, p.law()?)?)
        }
        other => {
            let kind = BaselineKind::parse(other).ok_or_else(|| fmt_err(kline, format!("unknown kind `{other}`")))?;
            let b = read_baseline(&p, kind)?;
            b.validate()?;
            ModelFile::Baseline(b)
        }
    };
    Ok(model)
}

/// Parses a file holding one or more models, each starting with the format
/// line. Pairwise copula fits are stored this way, in lexicographic pair
/// order.
pub fn read_models(text: &str) -> Result<Vec<ModelFile>> {
    let lines: Vec<&str> = text.lines().collect();
    let starts: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.trim_end_matches('\r') == FORMAT_LINE)
        .map(|(i, _)| i)
        .collect();
    if starts.first() != Some(&0) {
        return Err(fmt_err(1, format!("expected `{FORMAT_LINE}`")));
    }
    let mut out = Vec::with_capacity(starts.len());
    for (k, &s) in starts.iter().enumerate() {
        let e = starts.get(k + 1).copied().unwrap_or(lines.len());
        let block = lines[s..e].join("\n");
        let m = read_model(&block).map_err(|err| match err {
            Error::Format { line, msg } => Error::Format { line: line + s, msg },
            other => other,
        })?;
        out.push(m);
    }
    Ok(out)
}

fn read_baseline(p: &Parsed, kind: BaselineKind) -> Result<BaselineModel> {
    Ok(match kind {
        BaselineKind::MvNormal => {
            let mean = p.vector("mean")?;
            let n = mean.len();
            BaselineModel::MvNormal {
                mean: DVector::from_vec(mean),
                cov: p.full("cov", n)?,
            }
        }
        BaselineKind::MvT => {
            let mean = p.vector("mean")?;
            let n = mean.len();
            BaselineModel::MvT {
                mean: DVector::from_vec(mean),
                scale: p.full("scale", n)?,
                df: p.get("df", None, None)?,
            }
        }
        BaselineKind::Clayton | BaselineKind::Gumbel => {
            let table = |c: usize| -> Result<QuantileTable> {
                let v = (0..p.rows("marginal", Some(c)))
                    .map(|i| p.get("marginal", Some(i), Some(c)))
                    .collect::<Result<Vec<_>>>()?;
                QuantileTable::from_sorted(v).map_err(|e| fmt_err(p.last_line, e.to_string()))
            };
            let theta = p.get("theta", None, None)?;
            let marginals = [table(0)?, table(1)?];
            if kind == BaselineKind::Clayton {
                BaselineModel::Clayton { theta, marginals }
            } else {
                BaselineModel::Gumbel { theta, marginals }
            }
        }
        BaselineKind::OneFactorGaussian | BaselineKind::OneFactorT => {
            let heavy = kind == BaselineKind::OneFactorT;
            let opt = |name: &str, r: Option<usize>| -> Result<Option<f64>> {
                if heavy {
                    p.get(name, r, None).map(Some)
                } else {
                    Ok(None)
                }
            };
            let n = (1..).take_while(|&r| p.has("alpha", Some(r), None)).count();
            let assets = (1..=n)
                .map(|r| {
                    Ok(FactorAsset {
                        alpha: p.get("alpha", Some(r), None)?,
                        loading: p.get("loading", Some(r), None)?,
                        idio_sd: p.get("idio_sd", Some(r), None)?,
                        df: opt("df", Some(r))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let f = FactorBaseline {
                market_mean: p.get("market_mean", None, None)?,
                market_sd: p.get("market_sd", None, None)?,
                market_df: opt("market_df", None)?,
                assets,
            };
            if heavy {
                BaselineModel::OneFactorT(f)
            } else {
                BaselineModel::OneFactorGaussian(f)
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> TriangularModel {
        let mut m = TriangularModel::uniform(3, (1.0, 1.2, 1.7), (0.5, 1.0, 1.5)).unwrap();
        m.mu = vec![0.1, -0.25, 1.0 / 3.0];
        m.v[(2, 1)] = 2.5;
        m
    }

    #[test]
    fn triangular_roundtrip_is_exact() {
        let m = ModelFile::Triangular(tri());
        let text = write_model(&m);
        assert!(text.starts_with(FORMAT_LINE));
        assert_eq!(read_model(&text).unwrap(), m);
        let t = ModelFile::Triangular(TriangularModel {
            law: LatentLaw::StudentT { df: 9.5 },
            reduced: true,
            ..tri()
        });
        let mut tt = t.clone();
        if let ModelFile::Triangular(m) = &mut tt {
            for i in 0..3 {
                for j in 0..i {
                    m.u[(i, j)] = m.u[(j, j)];
                    m.v[(i, j)] = m.v[(j, j)];
                }
            }
        }
        assert_eq!(read_model(&write_model(&tt)).unwrap(), tt);
    }

    #[test]
    fn onefactor_roundtrip_is_exact() {
        let asset = AssetParams {
            alpha: 0.01,
            beta: 0.7,
            u_m: 1.1,
            v_m: 1.9,
            gamma: 0.4,
            u: 1.3,
            v: 2.2,
        };
        let m = OneFactorModel::new(
            MarketParams {
                alpha: 0.0,
                beta: 1.0,
                u: 1.2,
                v: 1.4,
            },
            vec![asset, AssetParams { beta: -0.2, ..asset }],
            4.0,
            LatentLaw::StandardNormal,
        )
        .unwrap();
        let f = ModelFile::OneFactor(m);
        assert_eq!(read_model(&write_model(&f)).unwrap(), f);
    }

    #[test]
    fn baseline_roundtrips_are_exact() {
        let tables = [
            QuantileTable::new(&[0.3, -1.0, 2.0]).unwrap(),
            QuantileTable::new(&[1.0, 5.0]).unwrap(),
        ];
        let f = FactorBaseline {
            market_mean: 0.1,
            market_sd: 1.1,
            market_df: Some(5.5),
            assets: vec![FactorAsset {
                alpha: 0.2,
                loading: 0.3,
                idio_sd: 0.9,
                df: Some(7.0),
            }],
        };
        let models = vec![
            BaselineModel::MvNormal {
                mean: DVector::from_vec(vec![0.1, 0.2]),
                cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]),
            },
            BaselineModel::MvT {
                mean: DVector::from_vec(vec![0.0, 0.0]),
                scale: DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]),
                df: 4.5,
            },
            BaselineModel::Clayton {
                theta: 1.25,
                marginals: tables.clone(),
            },
            BaselineModel::Gumbel {
                theta: 3.0,
                marginals: tables,
            },
            BaselineModel::OneFactorT(f.clone()),
            BaselineModel::OneFactorGaussian(FactorBaseline {
                market_df: None,
                assets: vec![FactorAsset { df: None, ..f.assets[0] }],
                ..f
            }),
        ];
        for b in models {
            let m = ModelFile::Baseline(b);
            assert_eq!(read_model(&write_model(&m)).unwrap(), m);
        }
    }

    #[test]
    fn errors_name_the_line() {
        let text = write_model(&ModelFile::Triangular(tri()));
        let broken = text.replacen("sigma,1,0,0.5", "sigma,1,0,abc", 1);
        match read_model(&broken) {
            Err(Error::Format { line, msg }) => {
                assert_eq!(text.lines().position(|l| l == "sigma,1,0,0.5").unwrap() + 1, line);
                assert!(msg.contains("abc"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_model("kind,triangular\n"), Err(Error::Format { line: 1, .. })));
        let missing = text.replace("u,2,1,1.0\n", "");
        assert!(matches!(read_model(&missing), Err(Error::Format { .. })));
        let bad_kind = text.replace("kind,triangular", "kind,vine");
        assert!(matches!(read_model(&bad_kind), Err(Error::Format { line: 2, .. })));
    }

    #[test]
    fn concatenated_models_split_with_global_lines() {
        let a = ModelFile::Triangular(tri());
        let b = ModelFile::Baseline(BaselineModel::Clayton {
            theta: 2.0,
            marginals: [
                QuantileTable::new(&[1.0, 2.0]).unwrap(),
                QuantileTable::new(&[3.0, 4.0]).unwrap(),
            ],
        });
        let text = format!("{}{}", write_model(&a), write_model(&b));
        assert_eq!(read_models(&text).unwrap(), vec![a.clone(), b]);
        let first_len = write_model(&a).lines().count();
        let broken = text.replace("theta,,,2.0", "theta,,,zz");
        let line = broken.lines().position(|l| l.contains("zz")).unwrap() + 1;
        assert!(line > first_len);
        assert!(matches!(read_models(&broken), Err(Error::Format { line: l, .. }) if l == line));
        assert!(read_models("kind,triangular\n").is_err());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let text = write_model(&ModelFile::Triangular(tri()));
        let bad = text.replace("v,2,1,2.5", "v,2,1,80.0");
        assert!(matches!(read_model(&bad), Err(Error::InvalidParameter { .. })));
    }
}
