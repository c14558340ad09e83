//! Feature storage: dense or ragged arrays of float/int/string data.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Flat storage for one feature column.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureData {
    F32(Vec<f32>),
    I64(Vec<i64>),
    Str(Vec<String>),
}

impl FeatureData {
    pub fn len(&self) -> usize {
        match self {
            FeatureData::F32(v) => v.len(),
            FeatureData::I64(v) => v.len(),
            FeatureData::Str(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn empty_like(&self) -> FeatureData {
        match self {
            FeatureData::F32(_) => FeatureData::F32(Vec::new()),
            FeatureData::I64(_) => FeatureData::I64(Vec::new()),
            FeatureData::Str(_) => FeatureData::Str(Vec::new()),
        }
    }

    fn append(&mut self, other: &FeatureData) -> Result<()> {
        match (self, other) {
            (FeatureData::F32(a), FeatureData::F32(b)) => a.extend_from_slice(b),
            (FeatureData::I64(a), FeatureData::I64(b)) => a.extend_from_slice(b),
            (FeatureData::Str(a), FeatureData::Str(b)) => a.extend_from_slice(b),
            _ => {
                return Err(Error::GraphBuild(
                    "cannot concatenate features of different dtypes".into(),
                ))
            }
        }
        Ok(())
    }

    fn extend_zeros(&mut self, count: usize) {
        match self {
            FeatureData::F32(v) => v.extend(std::iter::repeat_n(0.0, count)),
            FeatureData::I64(v) => v.extend(std::iter::repeat_n(0, count)),
            FeatureData::Str(v) => v.extend(std::iter::repeat_n(String::new(), count)),
        }
    }

    fn slice(&self, range: std::ops::Range<usize>) -> FeatureData {
        match self {
            FeatureData::F32(v) => FeatureData::F32(v[range].to_vec()),
            FeatureData::I64(v) => FeatureData::I64(v[range].to_vec()),
            FeatureData::Str(v) => FeatureData::Str(v[range].to_vec()),
        }
    }
}

/// One feature over a set of items. Dense features store
/// `items * product(inner_shape)` flat values; ragged features additionally
/// carry per-item row lengths for the leading (variable) feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    items: usize,
    data: FeatureData,
    inner_shape: Vec<usize>,
    row_lengths: Option<Vec<usize>>,
}

impl Feature {
    pub fn dense(items: usize, inner_shape: Vec<usize>, data: FeatureData) -> Result<Self> {
        let width: usize = inner_shape.iter().product();
        if data.len() != items * width {
            return Err(Error::GraphBuild(format!(
                "dense feature expects {} values ({items} items x width {width}), got {}",
                items * width,
                data.len()
            )));
        }
        Ok(Feature {
            items,
            data,
            inner_shape,
            row_lengths: None,
        })
    }

    pub fn ragged(
        row_lengths: Vec<usize>,
        inner_shape: Vec<usize>,
        data: FeatureData,
    ) -> Result<Self> {
        let width: usize = inner_shape.iter().product();
        let total: usize = row_lengths.iter().sum();
        if data.len() != total * width {
            return Err(Error::GraphBuild(format!(
                "ragged feature expects {} values (sum of row lengths {total} x width {width}), got {}",
                total * width,
                data.len()
            )));
        }
        Ok(Feature {
            items: row_lengths.len(),
            data,
            inner_shape,
            row_lengths: Some(row_lengths),
        })
    }

    /// Scalar-per-item float feature (inner shape `[]`).
    pub fn f32_scalars(values: Vec<f32>) -> Self {
        Feature {
            items: values.len(),
            data: FeatureData::F32(values),
            inner_shape: vec![],
            row_lengths: None,
        }
    }

    pub fn i64_scalars(values: Vec<i64>) -> Self {
        Feature {
            items: values.len(),
            data: FeatureData::I64(values),
            inner_shape: vec![],
            row_lengths: None,
        }
    }

    pub fn str_scalars(values: Vec<String>) -> Self {
        Feature {
            items: values.len(),
            data: FeatureData::Str(values),
            inner_shape: vec![],
            row_lengths: None,
        }
    }

    /// Store a rank-2 `[n, d]` tensor as a dense float feature.
    pub fn from_matrix(tensor: &DenseTensor<f32>) -> Self {
        Feature {
            items: tensor.shape()[0],
            data: FeatureData::F32(tensor.values().to_vec()),
            inner_shape: tensor.shape()[1..].to_vec(),
            row_lengths: None,
        }
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn data(&self) -> &FeatureData {
        &self.data
    }

    pub fn inner_shape(&self) -> &[usize] {
        &self.inner_shape
    }

    pub fn inner_width(&self) -> usize {
        self.inner_shape.iter().product()
    }

    pub fn is_ragged(&self) -> bool {
        self.row_lengths.is_some()
    }

    pub fn row_lengths(&self) -> Option<&[usize]> {
        self.row_lengths.as_deref()
    }

    /// View a dense float feature as a `[items, width]` matrix.
    pub fn as_f32_matrix(&self) -> Result<DenseTensor<f32>> {
        if self.is_ragged() {
            return Err(Error::InvalidArgument {
                op: "as_f32_matrix".into(),
                message: "feature is ragged; reduce it to a dense feature first".into(),
            });
        }
        match &self.data {
            FeatureData::F32(v) => {
                DenseTensor::new(vec![self.items, self.inner_width()], v.clone())
            }
            other => Err(Error::InvalidArgument {
                op: "as_f32_matrix".into(),
                message: format!(
                    "expected float32 data, got {}",
                    match other {
                        FeatureData::I64(_) => "int64",
                        FeatureData::Str(_) => "string",
                        FeatureData::F32(_) => unreachable!(),
                    }
                ),
            }),
        }
    }

    /// Dense int64 ids, one per item (inner shape `[]` or `[1]`).
    pub fn as_i64_scalars(&self) -> Result<Vec<i64>> {
        if self.is_ragged() || self.inner_width() != 1 {
            return Err(Error::InvalidArgument {
                op: "as_i64_scalars".into(),
                message: "expected one dense int64 value per item".into(),
            });
        }
        match &self.data {
            FeatureData::I64(v) => Ok(v.clone()),
            _ => Err(Error::InvalidArgument {
                op: "as_i64_scalars".into(),
                message: "expected int64 data".into(),
            }),
        }
    }

    pub fn as_str_scalars(&self) -> Result<Vec<String>> {
        if self.is_ragged() || self.inner_width() != 1 {
            return Err(Error::InvalidArgument {
                op: "as_str_scalars".into(),
                message: "expected one dense string value per item".into(),
            });
        }
        match &self.data {
            FeatureData::Str(v) => Ok(v.clone()),
            _ => Err(Error::InvalidArgument {
                op: "as_str_scalars".into(),
                message: "expected string data".into(),
            }),
        }
    }

    /// Mean over the ragged dimension; items with zero rows map to zeros.
    /// Result is a dense `[items, width]` float matrix.
    pub fn ragged_mean(&self) -> Result<DenseTensor<f32>> {
        let Some(row_lengths) = &self.row_lengths else {
            return Err(Error::InvalidArgument {
                op: "ragged_mean".into(),
                message: "feature is not ragged".into(),
            });
        };
        let FeatureData::F32(values) = &self.data else {
            return Err(Error::InvalidArgument {
                op: "ragged_mean".into(),
                message: "expected float32 data".into(),
            });
        };
        let width = self.inner_width();
        let mut out = vec![0.0f32; self.items * width];
        let mut offset = 0;
        for (i, &len) in row_lengths.iter().enumerate() {
            if len > 0 {
                for j in 0..width {
                    let mut acc = 0.0f64;
                    for r in 0..len {
                        acc += values[(offset + r) * width + j] as f64;
                    }
                    out[i * width + j] = (acc / len as f64) as f32;
                }
            }
            offset += len;
        }
        DenseTensor::new(vec![self.items, width], out)
    }

    /// Concatenate features item-wise (same dtype, shape, raggedness).
    pub fn concat(parts: &[&Feature]) -> Result<Feature> {
        let first = parts
            .first()
            .ok_or_else(|| Error::GraphBuild("cannot concatenate zero features".into()))?;
        let mut data = first.data.empty_like();
        let mut items = 0;
        let mut row_lengths = first.row_lengths.as_ref().map(|_| Vec::new());
        for part in parts {
            if part.inner_shape != first.inner_shape || part.is_ragged() != first.is_ragged() {
                return Err(Error::GraphBuild(
                    "features disagree on shape or raggedness".into(),
                ));
            }
            data.append(&part.data)?;
            items += part.items;
            if let (Some(acc), Some(lens)) = (&mut row_lengths, &part.row_lengths) {
                acc.extend_from_slice(lens);
            }
        }
        Ok(Feature {
            items,
            data,
            inner_shape: first.inner_shape.clone(),
            row_lengths,
        })
    }

    /// Items `range` of this feature (used to slice merged graphs back apart).
    pub fn slice_items(&self, range: std::ops::Range<usize>) -> Feature {
        let width = self.inner_width();
        match &self.row_lengths {
            None => Feature {
                items: range.len(),
                data: self.data.slice(range.start * width..range.end * width),
                inner_shape: self.inner_shape.clone(),
                row_lengths: None,
            },
            Some(lens) => {
                let before: usize = lens[..range.start].iter().sum();
                let inside: usize = lens[range.clone()].iter().sum();
                Feature {
                    items: range.len(),
                    data: self.data.slice(before * width..(before + inside) * width),
                    inner_shape: self.inner_shape.clone(),
                    row_lengths: Some(lens[range].to_vec()),
                }
            }
        }
    }

    /// Append `count` zero-valued items (empty rows for ragged features).
    pub(crate) fn append_padding(&mut self, count: usize) {
        self.items += count;
        match &mut self.row_lengths {
            Some(lens) => lens.extend(std::iter::repeat_n(0, count)),
            None => self.data.extend_zeros(count * self.inner_width()),
        }
    }
}
