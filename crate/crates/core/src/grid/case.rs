//! Grid case data model and the plain-text case format.
//!
//! ```text
//! baseMVA 100
//! bus
//! # id  type  Pd_kW        type 3 = market, 1 = microgrid, 0 = pass-through
//! 1  3  0
//! 2  1  90
//! branch
//! # from  to  x_pu  rate_kW
//! 1  2  0.0576  250
//! ```
//!
//! Bus ids in the file may be any distinct integers; they are remapped to
//! contiguous indices in file order and kept as labels.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Market,
    Microgrid,
    PassThrough,
}

impl BusKind {
    fn code(self) -> u8 {
        match self {
            BusKind::Market => 3,
            BusKind::Microgrid => 1,
            BusKind::PassThrough => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus<T> {
    /// Contiguous index.
    pub id: usize,
    /// Id as written in the source file.
    pub label: i64,
    pub kind: BusKind,
    pub load_kw: T,
    pub microgrid: Option<usize>,
}

impl<T> Bus<T> {
    pub fn is_market(&self) -> bool {
        self.kind == BusKind::Market
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line<T> {
    pub from: usize,
    pub to: usize,
    pub reactance_pu: T,
    pub limit_kw: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase<T> {
    pub base_mva: T,
    pub buses: Vec<Bus<T>>,
    pub lines: Vec<Line<T>>,
    market: usize,
    microgrid_buses: Vec<usize>,
}

impl<T: Scalar> GridCase<T> {
    /// Validates and assembles a case. Microgrid ids follow bus order.
    pub fn new(base_mva: T, mut buses: Vec<Bus<T>>, lines: Vec<Line<T>>) -> Result<Self> {
        let n = buses.len();
        if n < 2 {
            return Err(Error::InvalidGrid("need at least two buses".into()));
        }
        let markets: Vec<usize> = (0..n).filter(|&i| buses[i].is_market()).collect();
        let market = match markets.as_slice() {
            [m] => *m,
            [] => return Err(Error::InvalidGrid("no market bus (type 3)".into())),
            _ => return Err(Error::InvalidGrid("more than one market bus".into())),
        };
        let mut microgrid_buses = Vec::new();
        for (i, b) in buses.iter_mut().enumerate() {
            b.id = i;
            b.microgrid = if b.kind == BusKind::Microgrid {
                microgrid_buses.push(i);
                Some(microgrid_buses.len() - 1)
            } else {
                None
            };
        }
        for (k, l) in lines.iter().enumerate() {
            if l.from >= n || l.to >= n {
                return Err(Error::InvalidGrid(format!("line {k} references unknown bus")));
            }
            if l.from == l.to {
                return Err(Error::InvalidGrid(format!("line {k} is a self-loop")));
            }
            if !(l.reactance_pu > T::zero()) {
                return Err(Error::InvalidGrid(format!(
                    "line {k} has non-positive reactance {}",
                    l.reactance_pu
                )));
            }
            if !(l.limit_kw > T::zero()) {
                return Err(Error::InvalidGrid(format!(
                    "line {k} has non-positive thermal limit {}",
                    l.limit_kw
                )));
            }
        }
        let case = Self {
            base_mva,
            buses,
            lines,
            market,
            microgrid_buses,
        };
        if let Some(b) = case.first_unreachable() {
            return Err(Error::Disconnected(b));
        }
        Ok(case)
    }

    fn first_unreachable(&self) -> Option<usize> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            adj[l.from].push(l.to);
            adj[l.to].push(l.from);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.market]);
        seen[self.market] = true;
        while let Some(b) = queue.pop_front() {
            for &nb in &adj[b] {
                if !seen[nb] {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        seen.iter().position(|s| !s)
    }

    #[inline]
    pub fn market(&self) -> usize {
        self.market
    }

    /// Bus index of each microgrid, indexed by microgrid id.
    #[inline]
    pub fn microgrid_buses(&self) -> &[usize] {
        &self.microgrid_buses
    }

    #[inline]
    pub fn num_microgrids(&self) -> usize {
        self.microgrid_buses.len()
    }

    pub fn total_load_kw(&self) -> T {
        self.buses.iter().map(|b| b.load_kw).sum()
    }

    pub fn bus_by_label(&self, label: i64) -> Option<usize> {
        self.buses.iter().position(|b| b.label == label)
    }

    pub fn is_radial(&self) -> bool {
        self.lines.len() + 1 == self.buses.len()
    }

    /// Converts every numeric field to another scalar type.
    pub fn cast<U: Scalar>(&self) -> GridCase<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        GridCase {
            base_mva: c(self.base_mva),
            buses: self
                .buses
                .iter()
                .map(|b| Bus {
                    id: b.id,
                    label: b.label,
                    kind: b.kind,
                    load_kw: c(b.load_kw),
                    microgrid: b.microgrid,
                })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| Line {
                    from: l.from,
                    to: l.to,
                    reactance_pu: c(l.reactance_pu),
                    limit_kw: c(l.limit_kw),
                })
                .collect(),
            market: self.market,
            microgrid_buses: self.microgrid_buses.clone(),
        }
    }

    /// Renders the case in the text format accepted by [`parse_case`].
    pub fn to_case_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "baseMVA {}", self.base_mva);
        let _ = writeln!(s, "bus");
        let _ = writeln!(s, "# id type Pd_kW");
        for b in &self.buses {
            let _ = writeln!(s, "{} {} {}", b.label, b.kind.code(), b.load_kw);
        }
        let _ = writeln!(s, "branch");
        let _ = writeln!(s, "# from to x_pu rate_kW");
        for l in &self.lines {
            let _ = writeln!(
                s,
                "{} {} {} {}",
                self.buses[l.from].label,
                self.buses[l.to].label,
                l.reactance_pu,
                l.limit_kw
            );
        }
        s
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Bus,
    Branch,
}

fn parse_num<T: Scalar>(tok: &str, line: usize, what: &str) -> Result<T> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what} `{tok}`"),
    })?;
    if v.is_nan() {
        return Err(Error::Parse {
            line,
            msg: format!("{what} is NaN"),
        });
    }
    Ok(T::lit(v))
}

fn parse_label(tok: &str, line: usize) -> Result<i64> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad bus id `{tok}`"),
    })
}

/// Parses the text case format. See the module docs for the layout.
pub fn parse_case<T: Scalar>(text: &str) -> Result<GridCase<T>> {
    let mut base_mva = None;
    let mut section = Section::None;
    let mut buses: Vec<Bus<T>> = Vec::new();
    let mut labels: HashMap<i64, usize> = HashMap::new();
    let mut raw_lines: Vec<(usize, i64, i64, T, T)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let content = raw.split(['#', '%']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        match toks[0] {
            "baseMVA" => {
                if toks.len() != 2 {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "expected `baseMVA <number>`".into(),
                    });
                }
                base_mva = Some(parse_num::<T>(toks[1], lineno, "baseMVA")?);
                continue;
            }
            "bus" if toks.len() == 1 => {
                section = Section::Bus;
                continue;
            }
            "branch" if toks.len() == 1 => {
                section = Section::Branch;
                continue;
            }
            "end" if toks.len() == 1 => {
                section = Section::None;
                continue;
            }
            _ => {}
        }
        match section {
            Section::None => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("row outside of a section: `{content}`"),
                })
            }
            Section::Bus => {
                if toks.len() != 3 {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("bus row needs 3 columns, got {}", toks.len()),
                    });
                }
                let label = parse_label(toks[0], lineno)?;
                let kind = match toks[1] {
                    "3" => BusKind::Market,
                    "1" => BusKind::Microgrid,
                    "0" => BusKind::PassThrough,
                    other => {
                        return Err(Error::Parse {
                            line: lineno,
                            msg: format!("unknown bus type `{other}`"),
                        })
                    }
                };
                let load_kw = parse_num::<T>(toks[2], lineno, "Pd_kW")?;
                if load_kw < T::zero() {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "negative bus load".into(),
                    });
                }
                if labels.insert(label, buses.len()).is_some() {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("duplicate bus id {label}"),
                    });
                }
                buses.push(Bus {
                    id: buses.len(),
                    label,
                    kind,
                    load_kw,
                    microgrid: None,
                });
            }
            Section::Branch => {
                if toks.len() != 4 {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("branch row needs 4 columns, got {}", toks.len()),
                    });
                }
                let from = parse_label(toks[0], lineno)?;
                let to = parse_label(toks[1], lineno)?;
                let x = parse_num::<T>(toks[2], lineno, "x_pu")?;
                let rate = parse_num::<T>(toks[3], lineno, "rate_kW")?;
                raw_lines.push((lineno, from, to, x, rate));
            }
        }
    }

    let base_mva = base_mva.ok_or(Error::Parse {
        line: 0,
        msg: "missing baseMVA".into(),
    })?;
    let mut lines = Vec::with_capacity(raw_lines.len());
    for (lineno, from, to, x, rate) in raw_lines {
        let lookup = |l: i64| {
            labels.get(&l).copied().ok_or(Error::Parse {
                line: lineno,
                msg: format!("branch references unknown bus {l}"),
            })
        };
        lines.push(Line {
            from: lookup(from)?,
            to: lookup(to)?,
            reactance_pu: x,
            limit_kw: rate,
        });
    }
    GridCase::new(base_mva, buses, lines)
}

/// Converts the `bus` and `branch` tables of a Matpower `.m` case into the text
/// case format.
///
/// Matpower's MW and MVA figures are read as kW (`load_scale` = 1) or multiplied
/// by `load_scale`. The reference bus (type 3) becomes the market; every other
/// bus with positive demand becomes a microgrid, the rest pass-through. A zero
/// `rateA` means unlimited and is written as `inf`. Out-of-service branches
/// (status column present and zero) are dropped.
pub fn convert_matpower(text: &str, load_scale: f64) -> Result<String> {
    let base_mva = matpower_scalar(text, "baseMVA")?;
    let bus_rows = matpower_table(text, "bus")?;
    let branch_rows = matpower_table(text, "branch")?;

    let mut out = String::new();
    let _ = writeln!(out, "baseMVA {base_mva}");
    let _ = writeln!(out, "bus");
    let _ = writeln!(out, "# id type Pd_kW");
    for (line, row) in &bus_rows {
        if row.len() < 3 {
            return Err(Error::Parse {
                line: *line,
                msg: "bus row needs at least 3 columns".into(),
            });
        }
        let id = row[0] as i64;
        let pd = row[2] * load_scale;
        let ty = if row[1] as i64 == 3 {
            3
        } else if pd > 0.0 {
            1
        } else {
            0
        };
        let _ = writeln!(out, "{id} {ty} {}", pd.max(0.0));
    }
    let _ = writeln!(out, "branch");
    let _ = writeln!(out, "# from to x_pu rate_kW");
    for (line, row) in &branch_rows {
        if row.len() < 6 {
            return Err(Error::Parse {
                line: *line,
                msg: "branch row needs at least 6 columns".into(),
            });
        }
        if row.len() > 10 && row[10] == 0.0 {
            continue;
        }
        let rate = if row[5] > 0.0 {
            format!("{}", row[5] * load_scale)
        } else {
            "inf".to_string()
        };
        let _ = writeln!(out, "{} {} {} {}", row[0] as i64, row[1] as i64, row[3], rate);
    }
    Ok(out)
}

fn matpower_scalar(text: &str, name: &str) -> Result<f64> {
    let key = format!("mpc.{name}");
    for (idx, raw) in text.lines().enumerate() {
        let content = raw.split('%').next().unwrap_or("").trim();
        if let Some(rest) = content.strip_prefix(&key) {
            let rest = rest.trim_start();
            if let Some(val) = rest.strip_prefix('=') {
                let val = val.trim().trim_end_matches(';').trim();
                return val.parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: format!("bad {name} value `{val}`"),
                });
            }
        }
    }
    Err(Error::Parse {
        line: 0,
        msg: format!("missing mpc.{name}"),
    })
}

fn matpower_table(text: &str, name: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let key = format!("mpc.{name}");
    let mut rows = Vec::new();
    let mut inside = false;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let mut content = raw.split('%').next().unwrap_or("").trim();
        if !inside {
            let Some(rest) = content.strip_prefix(&key) else {
                continue;
            };
            let rest = rest.trim_start();
            let Some(rest) = rest.strip_prefix('=') else {
                continue;
            };
            let Some(rest) = rest.trim_start().strip_prefix('[') else {
                continue;
            };
            inside = true;
            content = rest;
        }
        let (body, closed) = match content.find(']') {
            Some(p) => (&content[..p], true),
            None => (content, false),
        };
        for chunk in body.split(';') {
            let vals: Vec<&str> = chunk.split_whitespace().collect();
            if vals.is_empty() {
                continue;
            }
            let row = vals
                .iter()
                .map(|v| {
                    v.parse::<f64>().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("bad number `{v}` in mpc.{name}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((lineno, row));
        }
        if closed {
            return Ok(rows);
        }
    }
    if inside {
        Err(Error::Parse {
            line: 0,
            msg: format!("unterminated mpc.{name} table"),
        })
    } else {
        Err(Error::Parse {
            line: 0,
            msg: format!("missing mpc.{name} table"),
        })
    }
}
