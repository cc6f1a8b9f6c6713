//! A small chart parser over lexical categories.
//!
//! Only the category combinations of the DO-WHAT imperative pattern are
//! supported: a head verb followed by a sequence of arguments, where each
//! argument is an optionally prepositioned entity phrase, a gerund-headed
//! nested action, or a "to"-infinitive nested action. Cells hold at most
//! one derivation per category; ambiguity is resolved deterministically by
//! preferring the widest single argument (so a nested action absorbs all
//! remaining arguments, as in the construct/read decomposition).

use super::lexicon::{LexCategory, Lexicon};
use super::{ActionNode, Arg, ArgPayload};

/// Per-token category after lexicon lookup. Unknown words act as entity
/// nouns in argument position; the sentence rule additionally lets an
/// unknown word head the action when it comes first.
#[derive(Debug, Clone, PartialEq)]
enum TokenCat {
    Verb(String),
    Gerund(String),
    Content(String),
    Modifier(String),
    Prep(String),
}

fn categorize(lexicon: &Lexicon, word: &str) -> TokenCat {
    match lexicon.lookup(word) {
        Some(LexCategory::Verb) => TokenCat::Verb(word.to_string()),
        Some(LexCategory::Gerund(base)) => TokenCat::Gerund(base.clone()),
        Some(LexCategory::Noun) => TokenCat::Content(word.to_string()),
        Some(LexCategory::Modifier) => TokenCat::Modifier(word.to_string()),
        Some(LexCategory::Preposition) => TokenCat::Prep(word.to_string()),
        None => TokenCat::Content(word.to_string()),
    }
}

/// Chart cell: one best derivation per category for a span.
#[derive(Debug, Clone, Default)]
struct Cell {
    noun_phrase: Option<String>,
    arg: Option<Arg>,
    arg_list: Option<Vec<Arg>>,
    /// Gerund or infinitive verb plus its argument list, forming a nested
    /// action spanning the cell.
    action: Option<ActionNode>,
}

pub struct Chart<'a> {
    cats: Vec<TokenCat>,
    cells: Vec<Cell>,
    n: usize,
    lexicon: &'a Lexicon,
}

impl<'a> Chart<'a> {
    pub fn parse_sentence(lexicon: &'a Lexicon, words: &[String]) -> Option<ActionNode> {
        if words.is_empty() {
            return None;
        }
        let cats: Vec<TokenCat> = words.iter().map(|w| categorize(lexicon, w)).collect();
        let n = cats.len();
        let mut chart = Chart {
            cats,
            cells: vec![Cell::default(); n * (n + 1)],
            n,
            lexicon,
        };
        chart.fill();

        // S -> V ArgList, with a sentence-initial gerund acting as its base
        // verb and an unknown word acting as a catch-all verb.
        let verb = match &chart.cats[0] {
            TokenCat::Verb(v) => v.clone(),
            TokenCat::Gerund(base) => base.clone(),
            TokenCat::Content(w) if chart.lexicon.lookup(w).is_none() => w.clone(),
            _ => return None,
        };
        if n == 1 {
            return None; // a bare verb has no maskable argument
        }
        let args = chart.cell(1, n).arg_list.clone()?;
        let node = ActionNode { verb, args };
        node.has_entity_arg().then_some(node)
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.n + 1) + j
    }

    fn cell(&self, i: usize, j: usize) -> &Cell {
        &self.cells[self.idx(i, j)]
    }

    fn fill(&mut self) {
        for len in 1..=self.n {
            for i in 0..=(self.n - len) {
                let j = i + len;
                let cell = self.build_cell(i, j);
                let idx = self.idx(i, j);
                self.cells[idx] = cell;
            }
        }
    }

    fn build_cell(&self, i: usize, j: usize) -> Cell {
        let mut cell = Cell::default();

        // NP -> content | modifier NP | content NP (right-branching merge of
        // adjacent content words into a single entity phrase).
        let head_word = match &self.cats[i] {
            TokenCat::Content(w) | TokenCat::Modifier(w) => Some(w.clone()),
            _ => None,
        };
        if let Some(w) = head_word {
            if j == i + 1 {
                cell.noun_phrase = Some(w);
            } else if let Some(rest) = &self.cell(i + 1, j).noun_phrase {
                cell.noun_phrase = Some(format!("{w} {rest}"));
            }
        }

        // Nested action: Gerund ArgList, or TO Verb ArgList.
        match &self.cats[i] {
            TokenCat::Gerund(base) if j > i + 1 => {
                if let Some(args) = &self.cell(i + 1, j).arg_list {
                    let node = ActionNode { verb: base.clone(), args: args.clone() };
                    if node.has_entity_arg() {
                        cell.action = Some(node);
                    }
                }
            }
            TokenCat::Prep(p) if p == "to" && j > i + 2 => {
                if let TokenCat::Verb(v) = &self.cats[i + 1] {
                    if let Some(args) = &self.cell(i + 2, j).arg_list {
                        let node = ActionNode { verb: v.clone(), args: args.clone() };
                        if node.has_entity_arg() {
                            cell.action = Some(node);
                        }
                    }
                }
            }
            _ => {}
        }

        // Arg alternatives, in preference order.
        cell.arg = self.build_arg(i, j, &cell);

        // ArgList -> Arg (whole span, preferred) | Arg ArgList with the
        // widest possible first argument.
        if let Some(arg) = &cell.arg {
            cell.arg_list = Some(vec![arg.clone()]);
        } else {
            for k in (i + 1..j).rev() {
                if let (Some(first), Some(rest)) =
                    (&self.cell(i, k).arg, &self.cell(k, j).arg_list)
                {
                    let mut list = Vec::with_capacity(1 + rest.len());
                    list.push(first.clone());
                    list.extend(rest.iter().cloned());
                    cell.arg_list = Some(list);
                    break;
                }
            }
        }

        cell
    }

    fn build_arg(&self, i: usize, j: usize, cell: &Cell) -> Option<Arg> {
        // Arg -> NP
        if let Some(phrase) = &cell.noun_phrase {
            return Some(Arg { preposition: None, payload: ArgPayload::Entity(phrase.clone()) });
        }
        // Arg -> nested action (gerund or infinitive heads the whole span)
        if let Some(action) = &cell.action {
            let preposition = match &self.cats[i] {
                TokenCat::Prep(p) => Some(p.clone()),
                _ => None,
            };
            return Some(Arg { preposition, payload: ArgPayload::Action(action.clone()) });
        }
        if j <= i + 1 {
            return None;
        }
        // Arg -> Prep NP | Prep nested-action
        if let TokenCat::Prep(p) = &self.cats[i] {
            let inner = self.cell(i + 1, j);
            if let Some(phrase) = &inner.noun_phrase {
                return Some(Arg {
                    preposition: Some(p.clone()),
                    payload: ArgPayload::Entity(phrase.clone()),
                });
            }
            if let Some(action) = &inner.action {
                return Some(Arg {
                    preposition: Some(p.clone()),
                    payload: ArgPayload::Action(action.clone()),
                });
            }
        }
        None
    }
}
