//! CSV ingestion and output, and atomic file writes.
//!
//! Observation files have the header `id,x,y,y1,y2,cov_1,...,cov_J` with
//! optional `membership_1` and `membership_2` columns holding `B`/`T` (also
//! read as `body`/`tail` or `0`/`1`) and optional `tail_vote_1`,
//! `tail_vote_2` vote fractions. Column order is free.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::classify::{Membership, MembershipLabels};
use crate::coregmix::SpatialDataset;
use crate::error::{Error, Result};
use crate::randomfield::{find_duplicate, Locations, Point};
use crate::risk::PredictionSummary;

const REQUIRED: [&str; 5] = ["id", "x", "y", "y1", "y2"];
const OPTIONAL: [&str; 4] = ["membership_1", "membership_2", "tail_vote_1", "tail_vote_2"];

/// Write through a temporary file in the target directory and rename it
/// into place, so a failed write never leaves a partial file behind.
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn parse_membership(s: &str) -> Option<Membership> {
    match s.trim().to_ascii_lowercase().as_str() {
        "b" | "body" | "0" => Some(Membership::Body),
        "t" | "tail" | "1" => Some(Membership::Tail),
        _ => None,
    }
}

/// Labels read from a file carry no classifier threshold. The threshold is
/// placed just below the smallest tail value (at the largest value under
/// it), so every tail value exceeds it, and `p` is the body fraction.
pub fn labels_from_memberships(values: &[f64], labels: Vec<Membership>) -> Result<MembershipLabels> {
    let n = labels.len();
    let tails: Vec<f64> = values.iter().zip(&labels).filter(|(_, m)| m.is_tail()).map(|(v, _)| *v).collect();
    let p = (n - tails.len()) as f64 / n as f64;
    let threshold = match tails.iter().copied().min_by(f64::total_cmp) {
        None => f64::INFINITY,
        Some(lo) => values
            .iter()
            .copied()
            .filter(|v| *v < lo)
            .max_by(f64::total_cmp)
            .unwrap_or(lo - 1e-9 * lo.abs().max(1.0)),
    };
    Ok(MembershipLabels::from_labels(labels, p, threshold))
}

/// Parse an observation table.
pub fn read_observations<R: Read>(reader: R) -> Result<SpatialDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.iter().all(String::is_empty) {
        return Err(Error::Schema("empty file: no header row".into()));
    }
    let col = |name: &str| header.iter().position(|h| h == name);

    let mut n_cov = 0;
    while col(&format!("cov_{}", n_cov + 1)).is_some() {
        n_cov += 1;
    }
    let cov_names: Vec<String> = (1..=n_cov).map(|j| format!("cov_{j}")).collect();
    let missing: Vec<&str> = REQUIRED.iter().copied().filter(|c| col(c).is_none()).collect();
    let known = |h: &str| {
        REQUIRED.contains(&h) || cov_names.iter().any(|c| c == h) || OPTIONAL.contains(&h)
    };
    let extra: Vec<&str> = header.iter().map(String::as_str).filter(|h| !known(h)).collect();
    let mut seen = std::collections::HashSet::new();
    let repeated: Vec<&str> = header.iter().map(String::as_str).filter(|h| !seen.insert(*h)).collect();
    if !missing.is_empty() || !extra.is_empty() || !repeated.is_empty() {
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("missing columns: {}", missing.join(", ")));
        }
        if !extra.is_empty() {
            parts.push(format!("unexpected columns: {}", extra.join(", ")));
        }
        if !repeated.is_empty() {
            parts.push(format!("repeated columns: {}", repeated.join(", ")));
        }
        return Err(Error::Schema(parts.join("; ")));
    }
    let idx = |name: &str| col(name).expect("checked above");
    let (ci, cx, cy, cy1, cy2) = (idx("id"), idx("x"), idx("y"), idx("y1"), idx("y2"));
    let ccov: Vec<usize> = cov_names.iter().map(|c| idx(c)).collect();
    let cmem = [col("membership_1"), col("membership_2")];
    let cvote = [col("tail_vote_1"), col("tail_vote_2")];
    for v in 0..2 {
        if cvote[v].is_some() && cmem[v].is_none() {
            return Err(Error::Schema(format!("tail_vote_{0} given without membership_{0}", v + 1)));
        }
    }

    let mut ids = Vec::new();
    let mut points = Vec::new();
    let mut y = [Vec::new(), Vec::new()];
    let mut covariates = Vec::new();
    let mut memberships: [Vec<Membership>; 2] = Default::default();
    let mut votes: [Vec<f64>; 2] = Default::default();
    let mut id_rows = std::collections::HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |c: usize| -> Result<f64> {
            let s = &rec[c];
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column '{}': '{s}' is not a number", header[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column '{}': '{s}' is not finite", header[c]),
                });
            }
            Ok(v)
        };
        let id = rec[ci].to_string();
        if let Some(prev) = id_rows.insert(id.clone(), line) {
            return Err(Error::Parse {
                line,
                message: format!("id '{id}' already used on line {prev}"),
            });
        }
        ids.push(id);
        points.push(Point::new(num(cx)?, num(cy)?));
        y[0].push(num(cy1)?);
        y[1].push(num(cy2)?);
        covariates.push(ccov.iter().map(|&c| num(c)).collect::<Result<Vec<f64>>>()?);
        for v in 0..2 {
            if let Some(c) = cmem[v] {
                let m = parse_membership(&rec[c]).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("column 'membership_{}': '{}' is not B or T", v + 1, &rec[c]),
                })?;
                memberships[v].push(m);
            }
            if let Some(c) = cvote[v] {
                let f = num(c)?;
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::Parse {
                        line,
                        message: format!("column 'tail_vote_{}': {f} is outside [0, 1]", v + 1),
                    });
                }
                votes[v].push(f);
            }
        }
    }
    if ids.is_empty() {
        return Err(Error::Schema("no data rows".into()));
    }
    if let Some((i, j)) = find_duplicate(&points) {
        return Err(Error::Input(format!(
            "rows {} and {} (ids '{}' and '{}') share a location",
            i + 1,
            j + 1,
            ids[i],
            ids[j]
        )));
    }
    let mut data = SpatialDataset::new(ids, Locations::new(points)?, y, covariates, cov_names)?;
    for v in 0..2 {
        if cmem[v].is_some() {
            let m = std::mem::take(&mut memberships[v]);
            let mut labels = labels_from_memberships(&data.y[v], m)?;
            if cvote[v].is_some() {
                labels.tail_votes = std::mem::take(&mut votes[v]);
            }
            data.labels[v] = Some(labels);
        }
    }
    Ok(data)
}

pub fn load_observations(path: &Path) -> Result<SpatialDataset> {
    read_observations(File::open(path)?)
}

/// Observation table; membership columns are written when labels are
/// present for both variables.
pub fn write_observations<W: Write>(data: &SpatialDataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let labels = match &data.labels {
        [Some(a), Some(b)] => Some([a, b]),
        _ => None,
    };
    let mut header: Vec<String> = REQUIRED.iter().map(|s| s.to_string()).collect();
    header.extend(data.covariate_names.iter().cloned());
    if labels.is_some() {
        header.extend(OPTIONAL.iter().map(|s| s.to_string()));
    }
    out.write_record(&header)?;
    for i in 0..data.len() {
        let p = data.locations.get(i);
        let mut row = vec![
            data.ids[i].clone(),
            p.x.to_string(),
            p.y.to_string(),
            data.y[0][i].to_string(),
            data.y[1][i].to_string(),
        ];
        row.extend(data.covariates[i].iter().map(f64::to_string));
        if let Some(l) = labels {
            for v in l {
                row.push(v.labels[i].code().into());
            }
            for v in l {
                row.push(v.tail_votes[i].to_string());
            }
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_predictions<W: Write>(rows: &[PredictionSummary], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "y", "var", "mean", "median", "sd", "q025", "q975", "p_tail"])?;
    for r in rows {
        out.write_record([
            r.x.to_string(),
            r.y.to_string(),
            r.var.to_string(),
            r.mean.to_string(),
            r.median.to_string(),
            r.sd.to_string(),
            r.q025.to_string(),
            r.q975.to_string(),
            r.p_tail.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// A prediction grid file: `x,y,cov_1,...,cov_J`.
pub fn read_grid<R: Read>(reader: R) -> Result<(Locations, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(cx), Some(cy)) = (col("x"), col("y")) else {
        return Err(Error::Schema("grid file needs x and y columns".into()));
    };
    let mut n_cov = 0;
    while col(&format!("cov_{}", n_cov + 1)).is_some() {
        n_cov += 1;
    }
    if header.len() != 2 + n_cov {
        let extra: Vec<&str> = header
            .iter()
            .map(String::as_str)
            .filter(|h| *h != "x" && *h != "y" && !h.starts_with("cov_"))
            .collect();
        return Err(Error::Schema(format!("unexpected grid columns: {}", extra.join(", "))));
    }
    let ccov: Vec<usize> = (1..=n_cov).map(|j| col(&format!("cov_{j}")).unwrap()).collect();
    let mut points = Vec::new();
    let mut covs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |c: usize| -> Result<f64> {
            rec[c].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                line,
                message: format!("column '{}': '{}' is not a finite number", header[c], &rec[c]),
            })
        };
        points.push(Point::new(num(cx)?, num(cy)?));
        covs.push(ccov.iter().map(|&c| num(c)).collect::<Result<Vec<f64>>>()?);
    }
    if points.is_empty() {
        return Err(Error::Schema("grid file has no rows".into()));
    }
    Ok((Locations::new(points)?, covs))
}
