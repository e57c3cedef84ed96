use super::EvalError;

#[derive(Clone, Debug, PartialEq)]
pub struct BufferEntry<T> {
    pub key: Vec<f64>,
    pub payload: T,
}

/// Nearest-neighbour cache over environment feature vectors, scored by
/// cosine similarity.
#[derive(Clone, Debug, Default)]
pub struct MemoryBuffer<T> {
    entries: Vec<BufferEntry<T>>,
    norms: Vec<f64>,
}

impl<T> MemoryBuffer<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            norms: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BufferEntry<T>] {
        &self.entries
    }

    /// Appends an entry and returns its index.
    pub fn insert(&mut self, key: Vec<f64>, payload: T) -> Result<usize, EvalError> {
        if let Some(first) = self.entries.first() {
            if first.key.len() != key.len() {
                return Err(EvalError::Dimension(format!(
                    "key has length {}, buffer holds length {}",
                    key.len(),
                    first.key.len()
                )));
            }
        }
        let n = norm(&key);
        if !(n > 0.0 && n.is_finite()) {
            return Err(EvalError::ZeroKey);
        }
        self.entries.push(BufferEntry { key, payload });
        self.norms.push(n);
        Ok(self.entries.len() - 1)
    }

    /// Index, entry and cosine similarity of the most similar key. Ties go
    /// to the earliest insertion.
    pub fn lookup(&self, query: &[f64]) -> Result<(usize, &BufferEntry<T>, f64), EvalError> {
        if self.entries.is_empty() {
            return Err(EvalError::EmptyBuffer);
        }
        if query.len() != self.entries[0].key.len() {
            return Err(EvalError::Dimension(format!(
                "query has length {}, keys have length {}",
                query.len(),
                self.entries[0].key.len()
            )));
        }
        let qn = norm(query);
        if !(qn > 0.0) {
            return Err(EvalError::ZeroQuery);
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (i, (e, n)) in self.entries.iter().zip(&self.norms).enumerate() {
            let dot: f64 = e.key.iter().zip(query).map(|(a, b)| a * b).sum();
            let sim = dot / (n * qn);
            if sim > best.1 {
                best = (i, sim);
            }
        }
        Ok((best.0, &self.entries[best.0], best.1))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
