pub mod adversarial;
pub mod corpus;
pub mod gen;
pub mod props;
pub mod shrink;

use secomp_core::trace::Event;

/// Every call in `m` is matched by a return.
pub fn balanced(m: &[Event]) -> bool {
    let mut depth = 0usize;
    for e in m {
        match e {
            Event::Call { .. } => depth += 1,
            Event::Return { .. } => match depth.checked_sub(1) {
                Some(d) => depth = d,
                None => return false,
            },
            _ => {}
        }
    }
    depth == 0
}
