use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::vocab::{Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::rng;

/// `[vocab_size, dim]` row-major embedding matrix with a zero PAD row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingTable {
    /// Uniform(-0.1, 0.1) rows, PAD zeroed.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng::derive(seed, "embedding.oov");
        let mut data: Vec<f32> = (0..vocab_size * dim).map(|_| rng.gen_range(-0.1..0.1)).collect();
        if vocab_size > PAD {
            data[PAD * dim..(PAD + 1) * dim].fill(0.0);
        }
        EmbeddingTable { dim, data }
    }

    pub fn from_rows(dim: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len() % dim.max(1), 0);
        EmbeddingTable { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn row(&self, id: usize) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Reads GloVe text vectors for the tokens of `vocab`. Tokens missing from
/// the file keep seeded uniform(-0.1, 0.1) rows. Returns the table and the
/// number of vocabulary rows found in the file.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<(EmbeddingTable, usize)> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut table = EmbeddingTable::random(vocab.len(), dim, seed);
    let mut found = vec![false; vocab.len()];
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        let mut parts = line.split(' ').filter(|s| !s.is_empty());
        let Some(token) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(Error::DimensionMismatch {
                path: path.to_path_buf(),
                line: lineno + 1,
                expected: dim,
                found: values.len(),
            });
        }
        let Some(id) = vocab.get(token) else { continue };
        if found[id] {
            continue;
        }
        let row = &mut table.data[id * dim..(id + 1) * dim];
        for (slot, raw) in row.iter_mut().zip(&values) {
            *slot = raw.parse::<f32>().map_err(|e| {
                Error::Parse(format!("{}:{}: {raw:?}: {e}", path.display(), lineno + 1))
            })?;
        }
        found[id] = true;
    }
    table.data[PAD * dim..(PAD + 1) * dim].fill(0.0);
    let hits = found.iter().filter(|&&f| f).count();
    log::info!("embeddings: {hits}/{} vocabulary rows found in {}", vocab.len(), path.display());
    Ok((table, hits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn vocab() -> Vocabulary {
        Vocabulary::build(&[vec!["cat".to_string(), "dog".to_string()]], 1).unwrap()
    }

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_rows_and_zeroes_pad() {
        let f = write("cat 0.1 0.2\n<pad> 5 5\nbird 1 1\n");
        let v = vocab();
        let (t, hits) = load_embeddings(f.path(), &v, 2, 7).unwrap();
        assert_eq!(t.row(v.id("cat")), &[0.1, 0.2]);
        assert_eq!(t.row(PAD), &[0.0, 0.0]);
        assert_eq!(hits, 2);
        assert_eq!(t.rows(), v.len());
    }

    #[test]
    fn oov_rows_are_seeded() {
        let f = write("cat 0.1 0.2\n");
        let v = vocab();
        let (a, _) = load_embeddings(f.path(), &v, 2, 3).unwrap();
        let (b, _) = load_embeddings(f.path(), &v, 2, 3).unwrap();
        let dog = v.id("dog");
        assert_eq!(a.row(dog), b.row(dog));
        assert!(a.row(dog).iter().all(|x| x.abs() < 0.1));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let f = write("cat 0.1 0.2 0.3\n");
        let err = load_embeddings(f.path(), &vocab(), 2, 0).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { line: 1, expected: 2, found: 3, .. }));
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(load_embeddings(Path::new("/nonexistent/glove.txt"), &vocab(), 2, 0).is_err());
    }
}
