//! Binary dataset format, little-endian throughout:
//!
//! ```text
//! magic "SRDS" | version u32 | N u32 | M u32
//! N × (len u32, utf-8 bytes)        user tokens
//! M × (len u32, utf-8 bytes)        item tokens
//! N × (count u32, count × (delta u32, split u8))
//! ```
//!
//! Item indices within a user are ascending; the first delta is the index
//! itself and later deltas are strictly positive.

use super::{ImplicitDataset, Split, Vocab};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"SRDS";
const VERSION: u32 = 1;

pub(super) fn encode(ds: &ImplicitDataset) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(&MAGIC);
    w.u32(VERSION);
    w.len_u32(ds.n_users(), "user count")?;
    w.len_u32(ds.n_items(), "item count")?;
    for vocab in [&ds.user_vocab, &ds.item_vocab] {
        for t in vocab.tokens() {
            w.len_u32(t.len(), "token length")?;
            w.bytes(t.as_bytes());
        }
    }
    for p in &ds.users {
        w.len_u32(p.len(), "positive count")?;
        let mut prev = 0;
        for (&item, &tag) in p.items.iter().zip(&p.tags) {
            w.len_u32(item - prev, "item delta")?;
            w.u8(tag.code());
            prev = item;
        }
    }
    Ok(w.finish())
}

fn read_tokens(r: &mut Reader<'_>, n: usize) -> Result<Vocab> {
    let mut tokens = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = r.u32("token length")? as usize;
        let raw = r.take(len, "token")?;
        let t = std::str::from_utf8(raw)
            .map_err(|_| Error::Corrupt("token is not valid utf-8".into()))?;
        tokens.push(t.to_owned());
    }
    Vocab::from_tokens(tokens)
}

pub(super) fn decode(bytes: &[u8]) -> Result<ImplicitDataset> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let n_users = r.u32("user count")? as usize;
    let n_items = r.u32("item count")? as usize;
    let users = read_tokens(&mut r, n_users)?;
    let items = read_tokens(&mut r, n_items)?;
    let mut lists = Vec::with_capacity(n_users.min(1 << 20));
    for _ in 0..n_users {
        let count = r.u32("positive count")? as usize;
        let mut list = Vec::with_capacity(count.min(1 << 16));
        let mut prev = 0usize;
        for k in 0..count {
            let delta = r.u32("item delta")? as usize;
            if k > 0 && delta == 0 {
                return Err(Error::Corrupt("item list is not strictly increasing".into()));
            }
            let tag = r.u8("split tag")?;
            let split = Split::from_code(tag)
                .ok_or_else(|| Error::Corrupt(format!("unknown split tag {tag}")))?;
            prev += delta;
            list.push((prev, split));
        }
        lists.push(list);
    }
    r.finish()?;
    ImplicitDataset::from_parts(lists, users, items)
}
