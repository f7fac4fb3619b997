//! Lookup tables and per-behavior embeddings.
//!
//! A behavior embedding is the element-wise sum of its item row, its
//! category row and the row of its position inside the (truncated) window.
//! Row 0 of the item and category tables is padding; the position table has
//! one row per window slot and no padding row.

use alloc::vec::Vec;
use rand::Rng;

use crate::data::Behavior;
use crate::error::{Error, Result};
use crate::rng::uniform_tensor;
use crate::tape::{Tape, Var};
use crate::tensor::{ParamId, ParamStore};

const INIT_BOUND: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTables {
    pub item: ParamId,
    pub category: ParamId,
    pub position: ParamId,
    pub d: usize,
    /// Rows of the item table, padding included.
    pub n_items: usize,
    /// Rows of the category table, padding included.
    pub n_categories: usize,
    pub max_len: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BehaviorEmbedding {
    pub vector: Var,
    pub timestamp: f64,
}

/// Embeddings of a whole window, one row per behavior, oldest first.
#[derive(Clone, Debug)]
pub struct EmbeddedSequence {
    pub vectors: Var,
    pub times: Vec<f64>,
}

impl EmbeddedSequence {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// The trailing `max_len` behaviors of `seq`.
pub fn window(seq: &[Behavior], max_len: usize) -> &[Behavior] {
    &seq[seq.len().saturating_sub(max_len)..]
}

pub(crate) fn check_ordering(times: impl IntoIterator<Item = f64>) -> Result<()> {
    let mut prev: Option<f64> = None;
    for t in times {
        if let Some(p) = prev {
            if t < p {
                return Err(Error::Ordering {
                    earlier: p,
                    later: t,
                });
            }
        }
        prev = Some(t);
    }
    Ok(())
}

impl EmbeddingTables {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        n_items: usize,
        n_categories: usize,
        max_len: usize,
        d: usize,
    ) -> Result<Self> {
        if n_items == 0 || n_categories == 0 || max_len == 0 || d == 0 {
            return Err(Error::contract("embedding tables need non-zero extents"));
        }
        let mut item = uniform_tensor(rng, n_items, d, INIT_BOUND);
        item.row_mut(0).fill(0.0);
        let mut category = uniform_tensor(rng, n_categories, d, INIT_BOUND);
        category.row_mut(0).fill(0.0);
        let position = uniform_tensor(rng, max_len, d, INIT_BOUND);
        Ok(EmbeddingTables {
            item: store.add_padded("embed.item", item, 1),
            category: store.add_padded("embed.category", category, 1),
            position: store.add("embed.position", position),
            d,
            n_items,
            n_categories,
            max_len,
        })
    }

    fn check_ids(&self, item: usize, category: usize, position: usize) -> Result<()> {
        for (what, index, extent) in [
            ("item id", item, self.n_items),
            ("category id", category, self.n_categories),
            ("position", position, self.max_len),
        ] {
            if index >= extent {
                return Err(Error::Index {
                    what,
                    index,
                    extent,
                });
            }
        }
        Ok(())
    }

    pub fn embed_behavior(
        &self,
        tape: &mut Tape,
        item: usize,
        category: usize,
        position: usize,
        timestamp: f64,
    ) -> Result<BehaviorEmbedding> {
        self.check_ids(item, category, position)?;
        let vector = self.sum_rows(tape, &[item], &[category], &[position])?;
        Ok(BehaviorEmbedding { vector, timestamp })
    }

    fn sum_rows(
        &self,
        tape: &mut Tape,
        items: &[usize],
        categories: &[usize],
        positions: &[usize],
    ) -> Result<Var> {
        let it = tape.param(self.item);
        let ct = tape.param(self.category);
        let pt = tape.param(self.position);
        let a = tape.gather_rows(it, items)?;
        let b = tape.gather_rows(ct, categories)?;
        let c = tape.gather_rows(pt, positions)?;
        let ab = tape.add(a, b)?;
        tape.add(ab, c)
    }

    /// Embeds the trailing `max_len` window of `seq`; positions count from 0
    /// at the oldest behavior kept.
    pub fn embed_sequence(&self, tape: &mut Tape, seq: &[Behavior]) -> Result<EmbeddedSequence> {
        if seq.is_empty() {
            return Err(Error::contract("cannot embed an empty sequence"));
        }
        let win = window(seq, self.max_len);
        check_ordering(win.iter().map(|b| b.timestamp))?;
        let mut items = Vec::with_capacity(win.len());
        let mut cats = Vec::with_capacity(win.len());
        for (pos, b) in win.iter().enumerate() {
            self.check_ids(b.item as usize, b.category as usize, pos)?;
            items.push(b.item as usize);
            cats.push(b.category as usize);
        }
        let positions: Vec<usize> = (0..win.len()).collect();
        let vectors = self.sum_rows(tape, &items, &cats, &positions)?;
        Ok(EmbeddedSequence {
            vectors,
            times: win.iter().map(|b| b.timestamp).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStreams;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn tables() -> (ParamStore, EmbeddingTables) {
        let mut store = ParamStore::new();
        let mut rng = SeedStreams::new(3).stream("init");
        let t = EmbeddingTables::init(&mut store, &mut rng, 5, 3, 50, 4).unwrap();
        (store, t)
    }

    fn b(item: u32, category: u32, timestamp: f64) -> Behavior {
        Behavior {
            item,
            category,
            timestamp,
        }
    }

    #[test]
    fn padding_rows_start_zeroed() {
        let (store, t) = tables();
        assert!(store.get(t.item).row(0).iter().all(|v| *v == 0.0));
        assert!(store.get(t.category).row(0).iter().all(|v| *v == 0.0));
        assert_eq!(store.padding_rows(t.item), 1);
        assert_eq!(store.padding_rows(t.position), 0);
    }

    #[test]
    fn zero_rows_give_zero_vector() {
        let (mut store, t) = tables();
        *store.get_mut(t.item) = Tensor::zeros(5, 4);
        *store.get_mut(t.category) = Tensor::zeros(3, 4);
        *store.get_mut(t.position) = Tensor::zeros(50, 4);
        let mut tape = Tape::new(&store);
        let e = t.embed_behavior(&mut tape, 2, 1, 0, 10.0).unwrap();
        assert_eq!(tape.value(e.vector), &[0.0; 4]);
        assert_eq!(e.timestamp, 10.0);
    }

    #[test]
    fn item_row_survives_zero_context() {
        let (mut store, t) = tables();
        *store.get_mut(t.category) = Tensor::zeros(3, 4);
        *store.get_mut(t.position) = Tensor::zeros(50, 4);
        let mut tape = Tape::new(&store);
        let e = t.embed_behavior(&mut tape, 3, 2, 7, 0.0).unwrap();
        assert_eq!(tape.value(e.vector), store.get(t.item).row(3));
    }

    #[test]
    fn sum_of_three_rows() {
        let (store, t) = tables();
        let mut tape = Tape::new(&store);
        let e = t.embed_behavior(&mut tape, 4, 2, 9, 0.0).unwrap();
        for c in 0..4 {
            let want = store.get(t.item).get(4, c)
                + store.get(t.category).get(2, c)
                + store.get(t.position).get(9, c);
            assert_eq!(tape.value(e.vector)[c], want);
        }
    }

    #[test]
    fn out_of_range_ids_are_index_errors() {
        let (store, t) = tables();
        let mut tape = Tape::new(&store);
        assert!(matches!(
            t.embed_behavior(&mut tape, 5, 0, 0, 0.0),
            Err(Error::Index {
                index: 5,
                extent: 5,
                ..
            })
        ));
        assert!(t.embed_behavior(&mut tape, 1, 3, 0, 0.0).is_err());
        assert!(t.embed_behavior(&mut tape, 1, 1, 50, 0.0).is_err());
    }

    #[test]
    fn sequence_is_truncated_to_window() {
        let (store, t) = tables();
        let seq: Vec<Behavior> = (0..60).map(|i| b(1 + (i % 4), 1, i as f64)).collect();
        let mut tape = Tape::new(&store);
        let e = t.embed_sequence(&mut tape, &seq).unwrap();
        assert_eq!(e.len(), 50);
        assert_eq!(e.times[0], 10.0);
        // Row 0 of the window uses position 0.
        let first = &tape.value(e.vectors)[0..4];
        for (c, got) in first.iter().enumerate() {
            let want = store.get(t.item).get(seq[10].item as usize, c)
                + store.get(t.category).get(1, c)
                + store.get(t.position).get(0, c);
            assert_eq!(*got, want);
        }
        assert_eq!(tape.value(e.vectors).len(), 200);
    }

    #[test]
    fn single_behavior_sequence() {
        let (store, t) = tables();
        let mut tape = Tape::new(&store);
        let e = t.embed_sequence(&mut tape, &[b(2, 2, 5.0)]).unwrap();
        assert_eq!(e.len(), 1);
        assert!(t.embed_sequence(&mut tape, &[]).is_err());
    }

    #[test]
    fn decreasing_timestamps_rejected() {
        let (store, t) = tables();
        let mut tape = Tape::new(&store);
        let r = t.embed_sequence(&mut tape, &[b(1, 1, 5.0), b(2, 1, 4.0)]);
        assert!(matches!(r, Err(Error::Ordering { .. })));
    }

    #[test]
    fn gradient_reaches_exactly_three_rows() {
        let (store, t) = tables();
        let mut tape = Tape::new(&store);
        let e = t.embed_behavior(&mut tape, 3, 1, 4, 0.0).unwrap();
        let loss = tape.sum(e.vector).unwrap();
        let g = tape.backward(loss).unwrap();
        let nonzero_rows = |id: ParamId, rows: usize| -> Vec<usize> {
            let gv = g.get(id).unwrap();
            (0..rows)
                .filter(|r| gv[r * 4..(r + 1) * 4].iter().any(|v| *v != 0.0))
                .collect()
        };
        assert_eq!(nonzero_rows(t.item, 5), vec![3]);
        assert_eq!(nonzero_rows(t.category, 3), vec![1]);
        assert_eq!(nonzero_rows(t.position, 50), vec![4]);
    }
}
