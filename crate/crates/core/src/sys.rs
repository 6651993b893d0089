//! The two buffer-based syscalls, shared by both semantics.

use crate::lang::{Ident, Syscall};
use crate::memory::{BlockId, GlobalEnv, Memory, Value};
use crate::trace::{Event, IoScript, MemDelta, IO_CAP};

pub(crate) struct SysResult {
    pub event: Event,
    pub ret: i64,
    /// The bytes `read` stored into the buffer.
    pub delta: Option<MemDelta>,
}

/// Performs `name` on `comp`'s global `buffer` with count `n`. `None` means
/// undefined behavior, attributed to `comp`: the syscall is not allowed, the
/// buffer is not a public global of `comp`, the count is not an Int within
/// the buffer, or some public global of `comp` holds a non-scalar.
#[allow(clippy::too_many_arguments)]
pub(crate) fn perform(
    mem: &mut Memory,
    genv: &GlobalEnv,
    comp: &Ident,
    allowed: bool,
    name: Syscall,
    buffer: &Ident,
    n: &Value,
    io: &mut IoScript,
) -> Option<SysResult> {
    if !allowed {
        return None;
    }
    let block = genv.lookup(comp, buffer)?;
    let sym = genv.symbol_of(block)?;
    if !sym.decl.public {
        return None;
    }
    let n = n.as_int()?;
    if n < 0 || n as u64 > sym.decl.size as u64 || n as usize > IO_CAP {
        return None;
    }
    if !genv.public_scalar(mem, comp) {
        return None;
    }
    let n_us = n as usize;
    Some(match name {
        Syscall::Read => {
            let mut chunk = io.next_read();
            chunk.truncate(n_us);
            for (i, b) in chunk.iter().enumerate() {
                mem.store(comp, block, i as i64, Value::Int(*b)).ok()?;
            }
            SysResult {
                ret: chunk.len() as i64,
                delta: Some(MemDelta::Bytes {
                    block,
                    offset: 0,
                    values: chunk.clone(),
                    comp: comp.clone(),
                }),
                event: Event::Syscall {
                    comp: comp.clone(),
                    name,
                    args: vec![n],
                    ret: chunk.len() as i64,
                    read_bytes: chunk,
                    written_bytes: vec![],
                },
            }
        }
        Syscall::Write => {
            let written = written_bytes(mem, comp, block, n_us)?;
            let ret = io.next_ack().clamp(0, n);
            SysResult {
                event: Event::Syscall {
                    comp: comp.clone(),
                    name,
                    args: vec![n],
                    read_bytes: vec![],
                    ret,
                    written_bytes: written,
                },
                ret,
                delta: None,
            }
        }
    })
}

/// The low bytes of the first `n` slots of `block`, if all are Ints.
pub(crate) fn written_bytes(mem: &mut Memory, comp: &Ident, block: BlockId, n: usize) -> Option<Vec<i64>> {
    (0..n)
        .map(|i| mem.load(comp, block, i as i64).ok()?.as_int().map(|v| v & 0xff))
        .collect()
}
