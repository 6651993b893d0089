//! Minimal S-expression reader shared by the source and assembly text formats.
//!
//! Atoms are maximal runs of characters other than whitespace, parentheses and
//! `;` (which starts a line comment). Every node remembers where it started so
//! that diagnostics can point at a line and column.

use std::fmt;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Sexp {
    Atom(String, Pos),
    List(Vec<Sexp>, Pos),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{pos}: {msg}")]
pub struct SexpError {
    pub pos: Pos,
    pub msg: String,
}

impl SexpError {
    pub fn new(pos: Pos, msg: impl Into<String>) -> Self {
        SexpError {
            pos,
            msg: msg.into(),
        }
    }
}

impl Sexp {
    pub fn pos(&self) -> Pos {
        match self {
            Sexp::Atom(_, p) | Sexp::List(_, p) => *p,
        }
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom(s, _) => Some(s),
            Sexp::List(..) => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List(items, _) => Some(items),
            Sexp::Atom(..) => None,
        }
    }

    /// The head symbol of a list form, e.g. `compartment` in `(compartment C0 ...)`.
    pub fn head(&self) -> Option<&str> {
        self.as_list().and_then(|l| l.first()).and_then(Sexp::as_atom)
    }

    pub fn expect_atom(&self, what: &str) -> Result<&str, SexpError> {
        self.as_atom()
            .ok_or_else(|| SexpError::new(self.pos(), format!("expected {what}, found a list")))
    }

    pub fn expect_list(&self, what: &str) -> Result<&[Sexp], SexpError> {
        self.as_list().ok_or_else(|| {
            SexpError::new(
                self.pos(),
                format!("expected {what}, found atom `{}`", self.as_atom().unwrap_or("")),
            )
        })
    }
}

/// Parses every top-level form in `text`.
pub fn parse_all(text: &str) -> Result<Vec<Sexp>, SexpError> {
    let mut reader = Reader {
        chars: text.chars().collect(),
        idx: 0,
        pos: Pos { line: 1, col: 1 },
    };
    let mut out = Vec::new();
    loop {
        reader.skip_ws();
        if reader.peek().is_none() {
            return Ok(out);
        }
        out.push(reader.read()?);
    }
}

struct Reader {
    chars: Vec<char>,
    idx: usize,
    pos: Pos,
}

impl Reader {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.idx).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.idx += 1;
        if c == '\n' {
            self.pos.line += 1;
            self.pos.col = 1;
        } else {
            self.pos.col += 1;
        }
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c == ';' {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    // Iterative so that deeply nested generated code cannot overflow the stack.
    fn read(&mut self) -> Result<Sexp, SexpError> {
        let mut stack: Vec<(Vec<Sexp>, Pos)> = Vec::new();
        loop {
            self.skip_ws();
            let start = self.pos;
            let node = match self.peek() {
                None => {
                    let open = stack.last().map(|(_, p)| *p).unwrap_or(start);
                    return Err(SexpError::new(open, "unclosed `(`"));
                }
                Some('(') => {
                    self.bump();
                    stack.push((Vec::new(), start));
                    continue;
                }
                Some(')') => {
                    self.bump();
                    match stack.pop() {
                        Some((items, p)) => Sexp::List(items, p),
                        None => return Err(SexpError::new(start, "unexpected `)`")),
                    }
                }
                Some(_) => {
                    let mut s = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                            break;
                        }
                        s.push(c);
                        self.bump();
                    }
                    Sexp::Atom(s, start)
                }
            };
            match stack.last_mut() {
                Some((items, _)) => items.push(node),
                None => return Ok(node),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_nested_lists_with_positions() {
        let forms = parse_all("(a (b c)\n  d) ; trailing\n(e)").unwrap();
        assert_eq!(forms.len(), 2);
        let items = forms[0].as_list().unwrap();
        assert_eq!(items[0].as_atom(), Some("a"));
        assert_eq!(items[2].pos(), Pos { line: 2, col: 3 });
        assert_eq!(forms[1].head(), Some("e"));
    }

    #[test]
    fn reports_unbalanced_parens() {
        assert!(parse_all("(a (b)").unwrap_err().msg.contains("unclosed"));
        let err = parse_all("a)").unwrap_err();
        assert_eq!(err.pos, Pos { line: 1, col: 2 });
    }
}
