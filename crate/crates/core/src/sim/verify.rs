use serde::{Deserialize, Serialize};

use crate::layout::{FileId, Layout};
use crate::protocol::{Delivery, DeliveryLog};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Duplicate {
    pub file: FileId,
    /// Sequence numbers of every request that returned `file`.
    pub sns: Vec<usize>,
}

/// Result of checking that an epoch returned every file exactly once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactlyOnceReport {
    pub delivered: usize,
    pub duplicates: Vec<Duplicate>,
    pub omissions: Vec<FileId>,
    /// Deliveries naming a file id outside the dataset.
    pub out_of_range: Vec<Delivery>,
}

impl ExactlyOnceReport {
    pub fn is_ok(&self) -> bool {
        self.duplicates.is_empty() && self.omissions.is_empty() && self.out_of_range.is_empty()
    }
}

/// Checks the returned files of all logs form a permutation of `0..files`.
pub fn verify_exactly_once<'a>(files: usize, logs: impl IntoIterator<Item = &'a DeliveryLog>) -> ExactlyOnceReport {
    let mut seen: Vec<Vec<usize>> = vec![Vec::new(); files];
    let mut report = ExactlyOnceReport::default();
    for d in logs.into_iter().flat_map(|l| &l.entries) {
        report.delivered += 1;
        match seen.get_mut(d.returned) {
            Some(s) => s.push(d.sn),
            None => report.out_of_range.push(*d),
        }
    }
    for (file, sns) in seen.into_iter().enumerate() {
        match sns.len() {
            0 => report.omissions.push(file),
            1 => {}
            _ => report.duplicates.push(Duplicate { file, sns }),
        }
    }
    report
}

/// Deliveries whose returned file does not share (vc, offset, home) with
/// the requested one.
pub fn redirection_violations<'a>(layout: &Layout, logs: impl IntoIterator<Item = &'a DeliveryLog>) -> Vec<Delivery> {
    let f = layout.num_files();
    logs.into_iter()
        .flat_map(|l| &l.entries)
        .filter(|d| {
            d.requested >= f || d.returned >= f || layout.meta(d.requested).slot() != layout.meta(d.returned).slot()
        })
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::LayoutConfig;

    fn log(entries: &[(usize, usize, usize)]) -> DeliveryLog {
        DeliveryLog {
            entries: entries
                .iter()
                .map(|&(sn, requested, returned)| Delivery {
                    sn,
                    requested,
                    returned,
                })
                .collect(),
        }
    }

    #[test]
    fn permutation_passes() {
        let a = log(&[(0, 0, 1), (2, 2, 2)]);
        let b = log(&[(1, 1, 0), (3, 3, 3)]);
        let r = verify_exactly_once(4, [&a, &b]);
        assert!(r.is_ok());
        assert_eq!(r.delivered, 4);
    }

    #[test]
    fn reports_duplicates_and_omissions() {
        let a = log(&[(0, 0, 1), (1, 1, 1), (2, 2, 9)]);
        let r = verify_exactly_once(3, [&a]);
        assert!(!r.is_ok());
        assert_eq!(
            r.duplicates,
            vec![Duplicate {
                file: 1,
                sns: vec![0, 1]
            }]
        );
        assert_eq!(r.omissions, vec![0, 2]);
        assert_eq!(r.out_of_range.len(), 1);
    }

    #[test]
    fn redirection_check() {
        let layout = Layout::uniform(LayoutConfig::new(18, 3, 2, 1), 1).unwrap();
        // Files 1 and 4 share vc 0, offset 1; file 2 is at offset 2.
        let good = log(&[(0, 1, 4)]);
        let bad = log(&[(0, 1, 2)]);
        assert!(redirection_violations(&layout, [&good]).is_empty());
        assert_eq!(redirection_violations(&layout, [&bad]).len(), 1);
    }
}
