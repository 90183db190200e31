//! Structured-text encoding of complex matrices: `{"rows", "cols", "data"}`
//! with `data` a row-major list of `[re, im]` pairs.

pub mod cmat_serde {
    use num_complex::Complex64;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::CMat;

    #[derive(Serialize, Deserialize)]
    pub(crate) struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<[f64; 2]>,
    }

    impl Repr {
        pub(crate) fn from_mat(m: &CMat) -> Self {
            let mut data = Vec::with_capacity(m.len());
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    let z = m[(r, c)];
                    data.push([z.re, z.im]);
                }
            }
            Repr {
                rows: m.nrows(),
                cols: m.ncols(),
                data,
            }
        }

        pub(crate) fn into_mat(self) -> Result<CMat, String> {
            if self.data.len() != self.rows * self.cols {
                return Err(format!(
                    "matrix data has {} entries, expected {}x{}",
                    self.data.len(),
                    self.rows,
                    self.cols
                ));
            }
            let cols = self.cols;
            Ok(CMat::from_fn(self.rows, self.cols, |r, c| {
                let [re, im] = self.data[r * cols + c];
                Complex64::new(re, im)
            }))
        }
    }

    pub fn serialize<S: Serializer>(m: &CMat, s: S) -> Result<S::Ok, S::Error> {
        Repr::from_mat(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMat, D::Error> {
        Repr::deserialize(d)?.into_mat().map_err(D::Error::custom)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(ms: &[CMat], s: S) -> Result<S::Ok, S::Error> {
            ms.iter().map(Repr::from_mat).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CMat>, D::Error> {
            Vec::<Repr>::deserialize(d)?
                .into_iter()
                .map(|r| r.into_mat().map_err(D::Error::custom))
                .collect()
        }
    }
}
