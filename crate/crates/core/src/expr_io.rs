//! Expression-matrix ingestion and edge-list files.
//!
//! Expression input is delimiter-separated text with one gene per row: the first
//! column holds the gene id, the remaining columns hold one value per sample. The
//! delimiter is detected from the first line (tab wins over comma) unless given.
//!
//! Edge lists are tab-separated with the header
//! `gene_a gene_b weight post_null post_pos post_neg component`, one row per
//! retained pair, `gene_a` being the lower gene index.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::decision::{Component, EdgeRecord, PosteriorTriple};
use crate::error::{Error, Result};

/// Genes × samples matrix of normalized expression values, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionMatrix {
    gene_ids: Vec<String>,
    sample_ids: Vec<String>,
    values: Vec<f64>,
}

impl ExpressionMatrix {
    /// Builds a matrix from row-major `values` (`gene_ids.len() * sample_ids.len()`).
    pub fn new(gene_ids: Vec<String>, sample_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let (g, n) = (gene_ids.len(), sample_ids.len());
        if g < 2 {
            return Err(Error::TooFewGenes(g));
        }
        if n < 4 {
            return Err(Error::TooFewSamples(n));
        }
        if values.len() != g * n {
            return Err(Error::invalid(format!(
                "expected {} values for {g} genes x {n} samples, got {}",
                g * n,
                values.len()
            )));
        }
        let mut seen = HashMap::with_capacity(g);
        for id in &gene_ids {
            if seen.insert(id.as_str(), ()).is_some() {
                return Err(Error::DuplicateGene(id.clone()));
            }
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::MissingValue {
                    gene: gene_ids[i / n].clone(),
                    sample: sample_ids[i % n].clone(),
                });
            }
        }
        Ok(ExpressionMatrix { gene_ids, sample_ids, values })
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    /// Expression profile of gene `g` across samples.
    pub fn row(&self, g: usize) -> &[f64] {
        let n = self.n_samples();
        &self.values[g * n..(g + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of gene pairs, `G(G-1)/2`.
    pub fn n_pairs(&self) -> usize {
        let g = self.n_genes();
        g * (g - 1) / 2
    }

    /// Restriction to the given genes, in the given order.
    pub fn select_genes(&self, genes: &[usize]) -> Result<Self> {
        let mut ids = Vec::with_capacity(genes.len());
        let mut values = Vec::with_capacity(genes.len() * self.n_samples());
        for &g in genes {
            if g >= self.n_genes() {
                return Err(Error::invalid(format!("gene index {g} out of range")));
            }
            ids.push(self.gene_ids[g].clone());
            values.extend_from_slice(self.row(g));
        }
        ExpressionMatrix::new(ids, self.sample_ids.clone(), values)
    }

    /// Writes the matrix as TSV with a `gene_id` header row.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        write!(out, "gene_id")?;
        for s in &self.sample_ids {
            write!(out, "\t{s}")?;
        }
        writeln!(out)?;
        for (g, id) in self.gene_ids.iter().enumerate() {
            write!(out, "{id}")?;
            for v in self.row(g) {
                write!(out, "\t{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Delimiter {
    #[default]
    Auto,
    Tab,
    Comma,
}

#[derive(Clone, Debug)]
pub struct ParseOptions {
    pub delimiter: Delimiter,
    /// First row names the samples.
    pub header: bool,
    /// Drop genes with missing cells instead of failing.
    pub drop_incomplete: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { delimiter: Delimiter::Auto, header: true, drop_incomplete: false }
    }
}

/// A gene removed by a lenient parse, with the first offending sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DroppedGene {
    pub gene: String,
    pub sample: String,
}

/// Parses an expression matrix, failing on the first gene with a missing cell unless
/// `drop_incomplete` is set.
pub fn parse_expression(path: impl AsRef<Path>, opts: &ParseOptions) -> Result<ExpressionMatrix> {
    parse_expression_reporting(path, opts).map(|(m, _)| m)
}

/// As [`parse_expression`], also returning the genes dropped for missing data.
pub fn parse_expression_reporting(
    path: impl AsRef<Path>,
    opts: &ParseOptions,
) -> Result<(ExpressionMatrix, Vec<DroppedGene>)> {
    let reader = BufReader::new(File::open(path)?);
    parse_expression_from(reader, opts)
}

pub fn parse_expression_from<R: BufRead>(
    reader: R,
    opts: &ParseOptions,
) -> Result<(ExpressionMatrix, Vec<DroppedGene>)> {
    let mut lines = reader.lines().enumerate().filter(|(_, l)| match l {
        Ok(s) => !s.trim().is_empty(),
        Err(_) => true,
    });
    let Some((first_no, first)) = lines.next() else {
        return Err(Error::TooFewGenes(0));
    };
    let first = first?;
    let delim = match opts.delimiter {
        Delimiter::Tab => '\t',
        Delimiter::Comma => ',',
        Delimiter::Auto if first.contains('\t') => '\t',
        Delimiter::Auto => ',',
    };
    let split = |s: &str| -> Vec<String> {
        s.trim_end_matches(['\r', '\n']).split(delim).map(|c| c.trim().to_string()).collect()
    };

    let mut gene_ids = Vec::new();
    let mut values = Vec::new();
    let mut dropped = Vec::new();
    let mut sample_ids: Vec<String>;
    let mut pending = Vec::new();
    if opts.header {
        sample_ids = split(&first).into_iter().skip(1).collect();
    } else {
        let cells = split(&first);
        sample_ids = (1..cells.len()).map(|j| format!("s{j}")).collect();
        pending.push((first_no, cells));
    }
    let n = sample_ids.len();
    if n < 4 {
        return Err(Error::TooFewSamples(n));
    }

    let rest = lines.map(|(no, l)| l.map(|s| (no, split(&s))));
    for item in pending.into_iter().map(Ok).chain(rest) {
        let (no, cells) = item?;
        if cells.len() != n + 1 {
            return Err(Error::Parse {
                line: no + 1,
                msg: format!("expected {} columns, found {}", n + 1, cells.len()),
            });
        }
        let gene = cells[0].clone();
        let mut row = Vec::with_capacity(n);
        let mut missing = None;
        for (j, cell) in cells[1..].iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    missing = Some(j);
                    break;
                }
            }
        }
        if let Some(j) = missing {
            let sample = sample_ids[j].clone();
            if opts.drop_incomplete {
                log::warn!("dropping gene {gene}: missing value in sample {sample}");
                dropped.push(DroppedGene { gene, sample });
                continue;
            }
            return Err(Error::MissingValue { gene, sample });
        }
        gene_ids.push(gene);
        values.extend(row);
    }
    sample_ids.shrink_to_fit();
    Ok((ExpressionMatrix::new(gene_ids, sample_ids, values)?, dropped))
}

/// Lookup from gene id to row index.
pub fn gene_index(gene_ids: &[String]) -> HashMap<&str, u32> {
    gene_ids.iter().enumerate().map(|(i, g)| (g.as_str(), i as u32)).collect()
}

/// Reads a list of gene ids, one per line (first field of each line). A leading
/// `gene_id` header line is skipped.
pub fn read_gene_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let id = line.split(['\t', ',']).next().unwrap_or("").trim();
        if id.is_empty() || (i == 0 && id == "gene_id") {
            continue;
        }
        out.push(id.to_string());
    }
    Ok(out)
}

pub fn write_gene_list(path: impl AsRef<Path>, gene_ids: &[String]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for id in gene_ids {
        writeln!(out, "{id}")?;
    }
    out.flush()?;
    Ok(())
}

pub const EDGE_LIST_HEADER: &str = "gene_a\tgene_b\tweight\tpost_null\tpost_pos\tpost_neg\tcomponent";

/// Incremental edge-list writer, so decisions can be written as they stream.
pub struct EdgeListWriter<'a, W: Write> {
    out: W,
    gene_ids: &'a [String],
}

impl<'a> EdgeListWriter<'a, BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, gene_ids: &'a [String]) -> Result<Self> {
        EdgeListWriter::new(BufWriter::new(File::create(path)?), gene_ids)
    }
}

impl<'a, W: Write> EdgeListWriter<'a, W> {
    pub fn new(mut out: W, gene_ids: &'a [String]) -> Result<Self> {
        writeln!(out, "{EDGE_LIST_HEADER}")?;
        Ok(EdgeListWriter { out, gene_ids })
    }

    pub fn write(&mut self, rec: &EdgeRecord) -> Result<()> {
        let (a, b) = (rec.a as usize, rec.b as usize);
        if a >= b || b >= self.gene_ids.len() {
            return Err(Error::invalid(format!("edge ({a}, {b}) is not a valid ordered pair")));
        }
        let p = &rec.posterior;
        writeln!(
            self.out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.gene_ids[a],
            self.gene_ids[b],
            rec.weight,
            p.post_null,
            p.post_pos,
            p.post_neg,
            rec.component.label()
        )?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Writes a whole edge list.
pub fn write_edge_list<'r>(
    path: impl AsRef<Path>,
    gene_ids: &[String],
    records: impl IntoIterator<Item = &'r EdgeRecord>,
) -> Result<()> {
    let mut w = EdgeListWriter::create(path, gene_ids)?;
    for rec in records {
        w.write(rec)?;
    }
    w.finish()?;
    Ok(())
}

/// Reads an edge list written by [`write_edge_list`].
pub fn read_edge_list(path: impl AsRef<Path>, gene_ids: &[String]) -> Result<Vec<EdgeRecord>> {
    let index = gene_index(gene_ids);
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        if no == 0 || line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: no + 1, msg };
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 7 {
            return Err(err(format!("expected 7 columns, found {}", cells.len())));
        }
        let a = lookup(&index, cells[0]).map_err(err)?;
        let b = lookup(&index, cells[1]).map_err(err)?;
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let component = Component::from_label(cells[6])
            .ok_or_else(|| err(format!("unknown component {:?}", cells[6])))?;
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        out.push(EdgeRecord {
            a,
            b,
            weight: num(cells[2])?,
            posterior: PosteriorTriple {
                post_null: num(cells[3])?,
                post_pos: num(cells[4])?,
                post_neg: num(cells[5])?,
            },
            component,
        });
    }
    Ok(out)
}

/// Reads only the gene pairs of an edge-list-like TSV (first two columns, header
/// skipped). Extra columns are ignored.
pub fn read_edge_pairs(path: impl AsRef<Path>, gene_ids: &[String]) -> Result<Vec<(u32, u32)>> {
    let index = gene_index(gene_ids);
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        if no == 0 || line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: no + 1, msg };
        let mut cells = line.split('\t');
        let (Some(a), Some(b)) = (cells.next(), cells.next()) else {
            return Err(err("expected at least 2 columns".into()));
        };
        let a = lookup(&index, a).map_err(err)?;
        let b = lookup(&index, b).map_err(err)?;
        out.push(if a < b { (a, b) } else { (b, a) });
    }
    Ok(out)
}

fn lookup(index: &HashMap<&str, u32>, id: &str) -> std::result::Result<u32, String> {
    index.get(id).copied().ok_or_else(|| format!("unknown gene id {id:?}"))
}

/// Serde adapter writing non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod serde_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str) -> Result<(ExpressionMatrix, Vec<DroppedGene>)> {
        parse_expression_from(Cursor::new(text), &ParseOptions::default())
    }

    #[test]
    fn parses_well_formed_tsv() {
        let text = "gene_id\ta\tb\tc\td\te\n\
                    g1\t1\t2\t3\t4\t5\n\
                    g2\t2\t1\t0\t3\t4\n\
                    g3\t0.5\t0.1\t-1\t2\t1e-3\n";
        let (m, dropped) = parse(text).unwrap();
        assert_eq!((m.n_genes(), m.n_samples()), (3, 5));
        assert!(dropped.is_empty());
        assert_eq!(m.gene_ids(), ["g1", "g2", "g3"]);
        assert_eq!(m.row(2)[4], 1e-3);
    }

    #[test]
    fn detects_comma_delimiter() {
        let text = "id,a,b,c,d\nx,1,2,3,4\ny,4,3,2,2\n";
        let (m, _) = parse(text).unwrap();
        assert_eq!(m.sample_ids(), ["a", "b", "c", "d"]);
    }

    #[test]
    fn empty_cell_is_missing_value() {
        let text = "gene_id\ta\tb\tc\td\ng1\t1\t2\t3\t4\ng2\t1\t\t3\t4\ng3\t3\t2\t1\t0\n";
        match parse(text) {
            Err(Error::MissingValue { gene, sample }) => {
                assert_eq!(gene, "g2");
                assert_eq!(sample, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
        let opts = ParseOptions { drop_incomplete: true, ..Default::default() };
        let (m, dropped) = parse_expression_from(Cursor::new(text), &opts).unwrap();
        assert_eq!(m.gene_ids(), ["g1", "g3"]);
        assert_eq!(dropped, vec![DroppedGene { gene: "g2".into(), sample: "b".into() }]);
    }

    #[test]
    fn non_numeric_cell_is_missing_value() {
        let text = "gene_id\ta\tb\tc\td\ng1\t1\tNA\t3\t4\ng2\t1\t2\t3\t5\n";
        assert!(matches!(parse(text), Err(Error::MissingValue { .. })));
    }

    #[test]
    fn rejects_two_samples() {
        let text = "gene_id\ta\tb\ng1\t1\t2\ng2\t2\t1\n";
        assert!(matches!(parse(text), Err(Error::TooFewSamples(2))));
    }

    #[test]
    fn rejects_duplicate_gene() {
        let text = "gene_id\ta\tb\tc\td\ng1\t1\t2\t3\t4\ng1\t1\t2\t3\t5\n";
        assert!(matches!(parse(text), Err(Error::DuplicateGene(g)) if g == "g1"));
    }

    #[test]
    fn headerless_input_names_samples() {
        let opts = ParseOptions { header: false, ..Default::default() };
        let text = "g1\t1\t2\t3\t4\ng2\t4\t3\t2\t0\n";
        let (m, _) = parse_expression_from(Cursor::new(text), &opts).unwrap();
        assert_eq!(m.n_genes(), 2);
        assert_eq!(m.sample_ids()[0], "s1");
    }

    #[test]
    fn ragged_row_is_parse_error() {
        let text = "gene_id\ta\tb\tc\td\ng1\t1\t2\t3\n";
        assert!(matches!(parse(text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_edge_list_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.tsv");
        let genes: Vec<String> = vec!["a".into(), "b".into()];
        write_edge_list(&path, &genes, &[]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{EDGE_LIST_HEADER}\n"));
        assert!(read_edge_list(&path, &genes).unwrap().is_empty());
    }

    #[test]
    fn single_edge_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.tsv");
        let genes: Vec<String> = vec!["g0".into(), "g1".into(), "g2".into()];
        let rec = EdgeRecord {
            a: 1,
            b: 2,
            weight: 0.8,
            posterior: PosteriorTriple { post_null: 0.1, post_pos: 0.9, post_neg: 0.0 },
            component: Component::Positive,
        };
        write_edge_list(&path, &genes, [&rec]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1], "g1\tg2\t0.8\t0.1\t0.9\t0\tC1");
        assert_eq!(read_edge_list(&path, &genes).unwrap(), vec![rec]);
    }

    #[test]
    fn writer_rejects_unordered_pair() {
        let genes: Vec<String> = vec!["g0".into(), "g1".into()];
        let mut w = EdgeListWriter::new(Vec::new(), &genes).unwrap();
        let rec = EdgeRecord {
            a: 1,
            b: 0,
            weight: 0.1,
            posterior: PosteriorTriple { post_null: 1.0, post_pos: 0.0, post_neg: 0.0 },
            component: Component::Null,
        };
        assert!(w.write(&rec).is_err());
    }
}
