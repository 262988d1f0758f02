//! Grouped observation matrices and the on-disk domain bundle format.
//!
//! A bundle is a directory holding `manifest.json` plus one CSV per domain.
//! Each domain CSV has a `model` label column followed by the benchmark
//! columns listed in the manifest. Synthetic bundles may also carry a
//! `<id>.latents.csv` file with the true latent factors.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain_id: String,
    pub observations: DMatrix<f64>,
    pub latents: Option<DMatrix<f64>>,
    pub row_labels: Vec<String>,
}

impl DomainDataset {
    pub fn new(domain_id: impl Into<String>, observations: DMatrix<f64>) -> Result<Self> {
        let labels = (0..observations.nrows()).map(|i| format!("row{i}")).collect();
        DomainDataset::with_labels(domain_id, observations, labels)
    }

    pub fn with_labels(
        domain_id: impl Into<String>,
        observations: DMatrix<f64>,
        row_labels: Vec<String>,
    ) -> Result<Self> {
        let domain_id = domain_id.into();
        if observations.nrows() == 0 {
            return Err(Error::InvalidInput(format!("domain {domain_id} has no rows")));
        }
        if observations.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("domain {domain_id} has non-finite entries")));
        }
        if row_labels.len() != observations.nrows() {
            return Err(Error::mismatch("row labels", observations.nrows(), row_labels.len()));
        }
        Ok(DomainDataset {
            domain_id,
            observations,
            latents: None,
            row_labels,
        })
    }

    pub fn with_latents(mut self, latents: DMatrix<f64>) -> Result<Self> {
        if latents.nrows() != self.observations.nrows() {
            return Err(Error::mismatch("latents", self.observations.nrows(), latents.nrows()));
        }
        self.latents = Some(latents);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainCollection {
    benchmarks: Vec<String>,
    domains: Vec<DomainDataset>,
}

impl DomainCollection {
    pub fn new(benchmarks: Vec<String>, domains: Vec<DomainDataset>) -> Result<Self> {
        let n = benchmarks.len();
        if n == 0 {
            return Err(Error::InvalidInput("collection needs at least one benchmark".into()));
        }
        for d in &domains {
            if d.observations.ncols() != n {
                return Err(Error::mismatch("domain columns", n, d.observations.ncols()));
            }
        }
        Ok(DomainCollection { benchmarks, domains })
    }

    pub fn benchmarks(&self) -> &[String] {
        &self.benchmarks
    }

    pub fn domains(&self) -> &[DomainDataset] {
        &self.domains
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DomainDataset> {
        self.domains.iter().find(|d| d.domain_id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.domains.iter().position(|d| d.domain_id == id)
    }

    /// Sub-collection in the order of `ids`.
    pub fn select(&self, ids: &[String]) -> Result<DomainCollection> {
        let domains = ids
            .iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput(format!("unknown domain {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        DomainCollection::new(self.benchmarks.clone(), domains)
    }

    /// All observations stacked vertically, in domain order.
    pub fn stacked(&self) -> DMatrix<f64> {
        let total: usize = self.domains.iter().map(DomainDataset::len).sum();
        let mut out = DMatrix::zeros(total, self.benchmarks.len());
        let mut r = 0;
        for d in &self.domains {
            out.rows_mut(r, d.len()).copy_from(&d.observations);
            r += d.len();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub benchmarks: Vec<String>,
    pub domains: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Maps a domain id to a safe file stem.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn write_matrix_csv(path: &Path, header: &[String], labels: Option<&[String]>, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut head: Vec<String> = Vec::with_capacity(header.len() + 1);
    if labels.is_some() {
        head.push("model".into());
    }
    head.extend(header.iter().cloned());
    w.write_record(&head)?;
    for (i, row) in m.row_iter().enumerate() {
        let mut rec: Vec<String> = Vec::with_capacity(head.len());
        if let Some(l) = labels {
            rec.push(l[i].clone());
        }
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_matrix_csv(path: &Path, labelled: bool) -> Result<(Vec<String>, Vec<String>, DMatrix<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let skip = usize::from(labelled);
    let cols = header.len().saturating_sub(skip);
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if labelled {
            labels.push(rec.get(0).unwrap_or_default().to_owned());
        }
        for j in 0..cols {
            let cell = rec.get(j + skip).unwrap_or_default();
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::InvalidInput(format!("{}: unparseable value {cell:?}", path.display()))
            })?;
            data.push(v);
        }
    }
    let rows = data.len() / cols.max(1);
    Ok((header[skip..].to_vec(), labels, DMatrix::from_row_slice(rows, cols, &data)))
}

/// Writes `collection` as a bundle under `dir` (created if needed).
pub fn write_bundle(dir: &Path, collection: &DomainCollection) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for d in collection.domains() {
        let stem = file_stem(&d.domain_id);
        let file = format!("{stem}.csv");
        write_matrix_csv(&dir.join(&file), collection.benchmarks(), Some(&d.row_labels), &d.observations)?;
        let latent_file = match &d.latents {
            Some(z) => {
                let f = format!("{stem}.latents.csv");
                let header: Vec<String> = (1..=z.ncols()).map(|i| format!("z{i}")).collect();
                write_matrix_csv(&dir.join(&f), &header, None, z)?;
                Some(f)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id: d.domain_id.clone(),
            file,
            rows: d.len(),
            latent_file,
        });
    }
    let manifest = Manifest {
        benchmarks: collection.benchmarks().to_vec(),
        domains: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_bundle(dir: &Path) -> Result<DomainCollection> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::InvalidInput(format!("no {} in {}", MANIFEST_FILE, dir.display())));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    let mut domains = Vec::new();
    for e in &manifest.domains {
        let (header, labels, x) = read_matrix_csv(&dir.join(&e.file), true)?;
        if header != manifest.benchmarks {
            return Err(Error::InvalidInput(format!(
                "{}: columns {:?} differ from manifest {:?}",
                e.file, header, manifest.benchmarks
            )));
        }
        let mut d = DomainDataset::with_labels(e.id.clone(), x, labels)?;
        if let Some(lf) = &e.latent_file {
            let (_, _, z) = read_matrix_csv(&dir.join(lf), false)?;
            d = d.with_latents(z)?;
        }
        domains.push(d);
    }
    DomainCollection::new(manifest.benchmarks, domains)
}
