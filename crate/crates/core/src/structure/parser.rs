use super::lexer::{lex, Tok, Token};
use super::{Atom, Definition, HeadExpr, StructureExpr, Term};
use crate::classify::{TreeNode, TreeSpec};
use crate::error::{Result, SpineError};
use crate::model::Family;

const KEYWORDS: [&str; 7] = ["head", "tree", "uniform", "lin", "quad", "sin", "sig"];

/// Parses structure text into its syntax tree. Every error carries the
/// line and column where it was detected.
pub fn parse(text: &str) -> Result<StructureExpr> {
    let tokens = lex(text)?;
    let mut p = Parser { tokens, pos: 0 };
    p.spec()
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.tokens[(self.pos + k).min(self.tokens.len() - 1)].tok
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, token: &Token, message: String) -> SpineError {
        SpineError::Parse {
            line: token.line,
            column: token.column,
            message,
        }
    }

    fn here(&self, message: String) -> SpineError {
        self.error_at(&self.tokens[self.pos], message)
    }

    fn expected(&self, what: &str) -> SpineError {
        self.here(format!("expected {what}, found {}", self.peek().describe()))
    }

    fn expect(&mut self, tok: Tok) -> Result<Token> {
        if *self.peek() == tok {
            Ok(self.next())
        } else {
            Err(self.expected(&tok.describe()))
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Name(n) if n == kw)
    }

    fn spec(&mut self) -> Result<StructureExpr> {
        if self.is_keyword("tree") {
            let tree = self.tree()?;
            if *self.peek() != Tok::Eof {
                return Err(self.here("a tree spec cannot be combined with heads or definitions".into()));
            }
            return Ok(StructureExpr {
                defs: Vec::new(),
                heads: Vec::new(),
                tree: Some(tree),
            });
        }
        let mut defs: Vec<Definition> = Vec::new();
        let mut def_tokens = Vec::new();
        while let Tok::Name(name) = self.peek().clone() {
            if name == "head" || name == "tree" {
                break;
            }
            let tok = self.next();
            self.check_name(&tok, &name)?;
            if defs.iter().any(|d| d.name == name) {
                return Err(self.error_at(&tok, format!("polytope '{name}' is already defined")));
            }
            self.expect(Tok::Define)?;
            if *self.peek() != Tok::LParen {
                return Err(self.expected("'(' starting a literal polytope"));
            }
            let atoms = self.literal()?;
            defs.push(Definition { name, atoms });
            def_tokens.push(tok);
        }
        let mut heads: Vec<HeadExpr> = Vec::new();
        let mut used = vec![false; defs.len()];
        while self.is_keyword("head") {
            self.next();
            let name = match self.peek().clone() {
                Tok::Name(n) => {
                    let tok = self.next();
                    self.check_name(&tok, &n)?;
                    if heads.iter().any(|h| h.name.as_deref() == Some(n.as_str())) {
                        return Err(self.error_at(&tok, format!("head '{n}' is already defined")));
                    }
                    Some(n)
                }
                _ => None,
            };
            self.expect(Tok::Eq)?;
            let mut terms = vec![self.term(&defs, &mut used)?];
            while *self.peek() == Tok::Pipe {
                self.next();
                terms.push(self.term(&defs, &mut used)?);
            }
            heads.push(HeadExpr { name, terms });
        }
        if heads.is_empty() {
            return Err(self.expected(if defs.is_empty() {
                "'head', 'tree' or a polytope definition"
            } else {
                "'head' or a polytope definition"
            }));
        }
        if *self.peek() != Tok::Eof {
            return Err(self.expected("'head', '|' or end of input"));
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(self.error_at(
                &def_tokens[i],
                format!("polytope '{}' is defined but never used by a head", defs[i].name),
            ));
        }
        Ok(StructureExpr {
            defs,
            heads,
            tree: None,
        })
    }

    fn check_name(&self, tok: &Token, name: &str) -> Result<()> {
        if KEYWORDS.contains(&name) {
            Err(self.error_at(tok, format!("'{name}' is reserved and cannot be used as a name")))
        } else {
            Ok(())
        }
    }

    fn term(&mut self, defs: &[Definition], used: &mut [bool]) -> Result<Term> {
        match self.peek().clone() {
            Tok::LParen => Ok(Term::Literal(self.literal()?)),
            Tok::Name(n) if n == "uniform" => self.uniform(),
            Tok::Name(n) if Family::from_tag(&n).is_some() => {
                Err(self.here(format!("expected a polytope, found bare family '{n}'; write '({n})'")))
            }
            Tok::Name(n) => {
                let tok = self.next();
                match defs.iter().position(|d| d.name == n) {
                    Some(i) => {
                        used[i] = true;
                        Ok(Term::Named(n))
                    }
                    None => Err(self.error_at(&tok, format!("undefined polytope '{n}'"))),
                }
            }
            _ => Err(self.expected("a polytope name, '(' or 'uniform('")),
        }
    }

    fn literal(&mut self) -> Result<Vec<Atom>> {
        self.expect(Tok::LParen)?;
        let mut atoms = vec![self.atom()?];
        while *self.peek() == Tok::Amp {
            self.next();
            atoms.push(self.atom()?);
        }
        self.expect(Tok::RParen)?;
        Ok(atoms)
    }

    fn atom(&mut self) -> Result<Atom> {
        let bang = if *self.peek() == Tok::Bang {
            Some(self.next())
        } else {
            None
        };
        let family = self.family()?;
        if let Some(tok) = &bang {
            if family != Family::Sigmoid {
                return Err(self.error_at(
                    tok,
                    format!("'!' is only allowed on 'sig', not on '{}'", family.tag()),
                ));
            }
        }
        Ok(Atom {
            family,
            complemented: bang.is_some(),
        })
    }

    fn family(&mut self) -> Result<Family> {
        if let Tok::Name(n) = self.peek() {
            if let Some(f) = Family::from_tag(n) {
                self.next();
                return Ok(f);
            }
        }
        Err(self.expected("a family ('lin', 'quad', 'sin' or 'sig')"))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        match *self.peek() {
            Tok::Int(0) => Err(self.here(format!("{what} must be at least 1"))),
            Tok::Int(v) => {
                self.next();
                Ok(v)
            }
            _ => Err(self.expected(&format!("a positive integer ({what})"))),
        }
    }

    fn uniform(&mut self) -> Result<Term> {
        self.next();
        self.expect(Tok::LParen)?;
        let family = self.family()?;
        self.expect(Tok::Comma)?;
        let unions = self.count("union count")?;
        self.expect(Tok::Comma)?;
        let intersections = self.count("intersection count")?;
        self.expect(Tok::RParen)?;
        Ok(Term::Uniform {
            family,
            unions,
            intersections,
        })
    }

    fn tree(&mut self) -> Result<TreeSpec> {
        let start = self.next();
        self.expect(Tok::LBrace)?;
        let root = self.node()?;
        self.expect(Tok::RBrace)?;
        TreeSpec::new(root).map_err(|e| self.error_at(&start, e.to_string()))
    }

    fn node(&mut self) -> Result<TreeNode> {
        match self.peek().clone() {
            Tok::Int(c) => {
                self.next();
                Ok(TreeNode::Leaf(c))
            }
            Tok::LParen => {
                self.next();
                match self.peek() {
                    Tok::Name(n) if n == "sig" => {
                        self.next();
                    }
                    _ => return Err(self.expected("'sig' (tree nodes are sigmoid decisions)")),
                }
                let on_true = self.node()?;
                let on_false = self.node()?;
                if *self.peek_at(0) != Tok::RParen {
                    return Err(self.expected("')' closing the tree node"));
                }
                self.next();
                Ok(TreeNode::Split(Box::new(on_true), Box::new(on_false)))
            }
            _ => Err(self.expected("a class number or '(' starting a tree node")),
        }
    }
}
