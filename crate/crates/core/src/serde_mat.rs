//! JSON encoding of matrices as nested rows of `[re, im]` pairs.
//! Plain numbers are accepted on input as purely real entries.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::matcore::{CMat, C64};

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(untagged)]
pub(crate) enum Entry {
    Pair([f64; 2]),
    Real(f64),
}

impl From<Entry> for C64 {
    fn from(e: Entry) -> C64 {
        match e {
            Entry::Pair([re, im]) => C64::new(re, im),
            Entry::Real(re) => C64::new(re, 0.0),
        }
    }
}

pub(crate) fn pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

pub(crate) fn rows_of(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| pair(m[(i, j)])).collect()).collect()
}

pub(crate) fn from_entries(rows: Vec<Vec<Entry>>) -> Result<CMat, String> {
    let rows: Vec<Vec<C64>> = rows.into_iter().map(|r| r.into_iter().map(C64::from).collect()).collect();
    CMat::from_rows(&rows).map_err(|e| e.to_string())
}

impl Serialize for CMat {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        rows_of(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for CMat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<CMat, D::Error> {
        let rows = Vec::<Vec<Entry>>::deserialize(d)?;
        from_entries(rows).map_err(serde::de::Error::custom)
    }
}

/// Column vectors given as a list of `[re, im]` lists, stacked as `r × k`.
pub(crate) mod columns {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<CMat>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(|m| rows_of(&m.transpose())).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<CMat>, D::Error> {
        let cols = Option::<Vec<Vec<Entry>>>::deserialize(d)?;
        match cols {
            None => Ok(None),
            Some(c) => from_entries(c).map(|m| Some(m.transpose())).map_err(serde::de::Error::custom),
        }
    }
}
