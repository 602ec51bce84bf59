//! Flat view over all trainable parameters with named segments. Constrained
//! quantities (amplitudes, length-scales, variances, factor diagonals) are
//! stored in unconstrained log coordinates so optimizer steps can never leave
//! the feasible set.

use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    pub segments: Vec<Segment>,
    pub total: usize,
}

impl ParamLayout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder {
            layout: ParamLayout::default(),
        }
    }

    pub fn find(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Offset and length of a named segment; panics on unknown names, which
    /// are programming errors.
    pub fn range(&self, name: &str) -> std::ops::Range<usize> {
        let s = self
            .find(name)
            .unwrap_or_else(|| panic!("unknown parameter segment {}", name));
        s.offset..s.offset + s.len
    }
}

pub struct LayoutBuilder {
    layout: ParamLayout,
}

impl LayoutBuilder {
    pub fn push(&mut self, name: impl Into<String>, len: usize) -> &mut Self {
        let offset = self.layout.total;
        self.layout.segments.push(Segment {
            name: name.into(),
            offset,
            len,
        });
        self.layout.total += len;
        self
    }

    pub fn build(self) -> Arc<ParamLayout> {
        Arc::new(self.layout)
    }
}

/// A value (or gradient) for every trainable scalar, segment-addressable.
#[derive(Debug, Clone)]
pub struct ParameterVector {
    pub layout: Arc<ParamLayout>,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let n = layout.total;
        ParameterVector {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn segment(&self, name: &str) -> &[f64] {
        &self.values[self.layout.range(name)]
    }

    pub fn segment_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self.layout.range(name);
        &mut self.values[r]
    }
}
