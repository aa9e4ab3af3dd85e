use crate::error::{Error, Result};

/// Split of a client's present classes into `M` contiguous runs of the
/// count-sorted class list. Group `m` is the training scope of expert `m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertAssignment {
    pub groups: Vec<Vec<usize>>,
    /// Present classes by descending count, ties by ascending class index.
    pub sorted_classes: Vec<usize>,
}

impl ExpertAssignment {
    /// Assignment for a client without data: `num_experts` empty groups.
    pub fn empty(num_experts: usize) -> Self {
        ExpertAssignment {
            groups: vec![Vec::new(); num_experts],
            sorted_classes: Vec::new(),
        }
    }

    pub fn num_experts(&self) -> usize {
        self.groups.len()
    }

    /// Index of the expert owning `class`, if the class is present.
    pub fn owner_of(&self, class: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&class))
    }

    /// Owner per class for `num_classes` classes.
    pub fn owners(&self, num_classes: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; num_classes];
        for (m, g) in self.groups.iter().enumerate() {
            for &c in g {
                if c < num_classes {
                    out[c] = Some(m);
                }
            }
        }
        out
    }

    /// True for trailing groups left empty because the client has fewer
    /// present classes than experts.
    pub fn is_skipped(&self, expert: usize) -> bool {
        self.groups[expert].is_empty()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }
}

/// Sorts present classes by `(count desc, index asc)` and cuts them into `M`
/// contiguous groups; the first `P mod M` groups take one extra class.
pub fn sort_and_group(counts: &[usize], num_experts: usize) -> Result<ExpertAssignment> {
    if num_experts == 0 {
        return Err(Error::InvalidArgument("number of experts must be >= 1".into()));
    }
    let mut sorted: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    if sorted.is_empty() {
        return Err(Error::InvalidArgument("client has no present class".into()));
    }
    sorted.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let base = sorted.len() / num_experts;
    let extra = sorted.len() % num_experts;
    let mut groups = Vec::with_capacity(num_experts);
    let mut start = 0;
    for m in 0..num_experts {
        let len = base + usize::from(m < extra);
        groups.push(sorted[start..start + len].to_vec());
        start += len;
    }
    Ok(ExpertAssignment {
        groups,
        sorted_classes: sorted,
    })
}
