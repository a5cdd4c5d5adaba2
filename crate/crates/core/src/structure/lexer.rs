use crate::error::{Result, SpineError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Tok {
    Name(String),
    Int(usize),
    Define,
    Eq,
    Pipe,
    Amp,
    Bang,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Name(n) => format!("'{n}'"),
            Tok::Int(i) => format!("'{i}'"),
            Tok::Define => "':='".into(),
            Tok::Eq => "'='".into(),
            Tok::Pipe => "'|'".into(),
            Tok::Amp => "'&'".into(),
            Tok::Bang => "'!'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::LBrace => "'{'".into(),
            Tok::RBrace => "'}'".into(),
            Tok::Comma => "','".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub column: usize,
}

pub(crate) fn lex(text: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut column) = (1, 1);
    let err = |line, column, message: String| SpineError::Parse { line, column, message };
    while let Some(&c) = chars.peek() {
        let (l, col) = (line, column);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                column = 1;
            } else {
                column += 1;
            }
            c
        };
        if c.is_whitespace() {
            bump(&mut chars);
            continue;
        }
        if c == '#' {
            while let Some(&c) = chars.peek() {
                if c == '\n' {
                    break;
                }
                bump(&mut chars);
            }
            continue;
        }
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let mut name = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    name.push(c);
                    bump(&mut chars);
                } else {
                    break;
                }
            }
            Tok::Name(name)
        } else if c.is_ascii_digit() {
            let mut digits = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_digit() {
                    digits.push(c);
                    bump(&mut chars);
                } else {
                    break;
                }
            }
            Tok::Int(
                digits
                    .parse()
                    .map_err(|_| err(l, col, format!("integer '{digits}' is too large")))?,
            )
        } else {
            bump(&mut chars);
            match c {
                ':' => {
                    if chars.peek() == Some(&'=') {
                        bump(&mut chars);
                        Tok::Define
                    } else {
                        return Err(err(l, col, "expected ':=' after ':'".into()));
                    }
                }
                '=' => Tok::Eq,
                '|' => Tok::Pipe,
                '&' => Tok::Amp,
                '!' => Tok::Bang,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '{' => Tok::LBrace,
                '}' => Tok::RBrace,
                ',' => Tok::Comma,
                other => return Err(err(l, col, format!("unexpected character '{other}'"))),
            }
        };
        out.push(Token { tok, line: l, column: col });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_and_comments() {
        let toks = lex("# c\nS := (lin & !sig)\n  head = S").unwrap();
        assert_eq!(toks[0].tok, Tok::Name("S".into()));
        assert_eq!((toks[0].line, toks[0].column), (2, 1));
        assert_eq!(toks[1].tok, Tok::Define);
        let head = toks.iter().find(|t| t.tok == Tok::Name("head".into())).unwrap();
        assert_eq!((head.line, head.column), (3, 3));
        assert_eq!(toks.last().unwrap().tok, Tok::Eof);
    }

    #[test]
    fn stray_characters_are_located() {
        let e = lex("head = (lin $ lin)").unwrap_err();
        assert!(matches!(e, SpineError::Parse { line: 1, column: 13, .. }), "{e}");
        assert!(lex("S : (lin)").is_err());
    }
}
