//! Solution dumps: a `key = value` header block, a blank line, then CSV rows
//! `index,x[,y],u_1..u_n` over every node, boundary included.

use std::io::{self, BufRead, Write};

use quadgrad::{Grid, Solution, VectorField};

#[derive(Debug, Clone, PartialEq)]
pub struct DumpHeader {
    pub dim: usize,
    pub extents: Vec<(f64, f64)>,
    pub resolution: Vec<usize>,
    pub n: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub residual: f64,
    pub converged: bool,
}

pub fn write_dump<W: Write>(
    mut out: W,
    grid: &Grid<f64>,
    lambda: f64,
    gamma: f64,
    s: &Solution<f64>,
) -> io::Result<()> {
    let dim = grid.dim();
    let n = s.u.n();
    writeln!(out, "dim = {dim}")?;
    let extents: Vec<String> = (0..dim).map(|a| format!("{:?}:{:?}", grid.lower(a), grid.upper(a))).collect();
    writeln!(out, "extents = {}", extents.join(", "))?;
    let res: Vec<String> = (0..dim).map(|a| grid.resolution(a).to_string()).collect();
    writeln!(out, "resolution = {}", res.join(", "))?;
    writeln!(out, "n = {n}")?;
    writeln!(out, "lambda = {lambda:?}")?;
    writeln!(out, "gamma = {gamma:?}")?;
    writeln!(out, "residual = {:?}", s.residual_norm)?;
    writeln!(out, "converged = {}", s.converged)?;
    writeln!(out)?;
    write_rows(out, grid, &s.u)
}

fn write_rows<W: Write>(mut out: W, grid: &Grid<f64>, u: &VectorField<f64>) -> io::Result<()> {
    let dim = grid.dim();
    let mut header = vec!["index".to_string(), "x".into()];
    if dim == 2 {
        header.push("y".into());
    }
    header.extend((1..=u.n()).map(|i| format!("u_{i}")));
    writeln!(out, "{}", header.join(","))?;
    for k in 0..grid.node_count() {
        let c = grid.coords(k);
        let mut row = vec![k.to_string(), format!("{:?}", c[0])];
        if dim == 2 {
            row.push(format!("{:?}", c[1]));
        }
        row.extend((0..u.n()).map(|i| format!("{:?}", u.get(i, k))));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()
}

/// Parses a dump back into its header and the `u` columns (`values[i][k]`).
pub fn read_dump<R: BufRead>(input: R) -> Result<(DumpHeader, Vec<Vec<f64>>), String> {
    let mut lines = input.lines();
    let mut fields = std::collections::HashMap::new();
    for line in lines.by_ref() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            break;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("bad header line `{line}`"))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| format!("missing `{k}`"));
    let float = |k: &str| get(k)?.parse::<f64>().map_err(|e| format!("{k}: {e}"));
    let count = |k: &str| get(k)?.parse::<usize>().map_err(|e| format!("{k}: {e}"));
    let extents = get("extents")?
        .split(',')
        .map(|r| {
            let (a, b) = r.trim().split_once(':').ok_or("bad extent")?;
            Ok((a.parse::<f64>().map_err(|e| e.to_string())?, b.parse::<f64>().map_err(|e| e.to_string())?))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let resolution = get("resolution")?
        .split(',')
        .map(|r| r.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, String>>()?;
    let header = DumpHeader {
        dim: count("dim")?,
        extents,
        resolution,
        n: count("n")?,
        lambda: float("lambda")?,
        gamma: float("gamma")?,
        residual: float("residual")?,
        converged: get("converged")? == "true",
    };
    let mut values = vec![Vec::new(); header.n];
    let skip = 1 + header.dim;
    for line in lines.skip(1) {
        let line = line.map_err(|e| e.to_string())?;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != skip + header.n {
            return Err(format!("row `{line}` has {} columns", cols.len()));
        }
        for (i, v) in values.iter_mut().enumerate() {
            v.push(cols[skip + i].parse::<f64>().map_err(|e| e.to_string())?);
        }
    }
    Ok((header, values))
}
