//! Disassembly listings: parsing into functions and basic blocks, and
//! instruction normalization.
//!
//! An instruction is treated as a single word. Before it becomes a word its
//! operands are rewritten so that values which would otherwise explode the
//! vocabulary (long constants, addresses, generated label names) collapse
//! into a handful of tags:
//!
//! | operand                                   | rewritten to        |
//! |-------------------------------------------|---------------------|
//! | constant with more than four digits       | `<CONST>`           |
//! | segment-prefixed symbol, absolute address | `<ADDR>`            |
//! | IDA stack variable (`VAR_58`, `ARG_0`)    | `<VAR>`             |
//! | generated label (`LOC_9BA3B`)             | `LOC_<TAG>`         |
//! | other bare data symbol                    | `<TAG>`             |
//! | pointer size (`BYTE PTR`)                 | `<BYTE_PTR>`        |
//!
//! Named call and branch targets (`CALL CRYPTO_FREE`) and registers are kept
//! verbatim, and the opcode is never rewritten.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchId {
    X86,
    Arm,
}

impl ArchId {
    pub const ALL: [ArchId; 2] = [ArchId::X86, ArchId::Arm];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchId::X86 => "x86",
            ArchId::Arm => "arm",
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x86" | "x86_64" | "x64" | "amd64" => Ok(ArchId::X86),
            "arm" | "arm32" | "armv7" | "aarch64" | "arm64" => Ok(ArchId::Arm),
            _ => Err(Error::UnsupportedArch(s.to_string())),
        }
    }
}

/// One parsed instruction: an opcode and its top-level operands.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: String,
    pub operands: Vec<String>,
    pub arch: ArchId,
}

impl Instruction {
    /// Parses a single instruction in Intel-style `op dst, src` syntax.
    ///
    /// Operands are split on commas outside brackets and braces. Whitespace
    /// inside an operand is squeezed out: a run between two word characters
    /// becomes `_` (`BYTE PTR` → `BYTE_PTR`), any other run is dropped.
    pub fn parse(line: &str, arch: ArchId) -> std::result::Result<Self, String> {
        let line = line.trim();
        let mut rest = line;
        let mut opcode = String::new();
        loop {
            let (head, tail) = split_first_token(rest);
            if head.is_empty() {
                break;
            }
            if !opcode.is_empty() {
                opcode.push('_');
            }
            opcode.push_str(head);
            rest = tail;
            if !is_prefix(head) {
                break;
            }
        }
        if opcode.is_empty() {
            return Err("empty instruction".into());
        }
        let first = opcode.chars().next().unwrap_or(' ');
        if !(first.is_ascii_alphabetic() || first == '_')
            || !opcode.chars().all(|c| c.is_ascii_alphanumeric() || "_.".contains(c))
        {
            return Err(format!("invalid opcode `{opcode}`"));
        }

        let operands = split_operands(rest)?
            .into_iter()
            .map(|op| squeeze_whitespace(&op))
            .collect::<Vec<_>>();
        if operands.iter().any(String::is_empty) {
            return Err(format!("empty operand in `{line}`"));
        }
        Ok(Instruction { opcode, operands, arch })
    }

    pub fn flow(&self) -> FlowKind {
        flow_kind(self.arch, &self.opcode, &self.operands)
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.opcode)?;
        for (i, op) in self.operands.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { ", " })?;
            f.write_str(op)?;
        }
        Ok(())
    }
}

fn split_first_token(s: &str) -> (&str, &str) {
    let s = s.trim_start();
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, ""),
    }
}

fn is_prefix(tok: &str) -> bool {
    matches!(
        tok.to_ascii_uppercase().as_str(),
        "REP" | "REPE" | "REPZ" | "REPNE" | "REPNZ" | "LOCK" | "BND" | "NOTRACK"
    )
}

fn split_operands(s: &str) -> std::result::Result<Vec<String>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut depth: i32 = 0;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '[' | '{' | '(' => depth += 1,
            ']' | '}' | ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err(format!("unbalanced `{c}` in `{s}`"));
                }
            }
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if depth != 0 {
        return Err(format!("unbalanced brackets in `{s}`"));
    }
    out.push(cur);
    Ok(out)
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '$' | '@' | '?')
}

fn squeeze_whitespace(op: &str) -> String {
    let chars: Vec<char> = op.trim().chars().collect();
    let mut out = String::with_capacity(chars.len());
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            let start = i;
            while i < chars.len() && chars[i].is_whitespace() {
                i += 1;
            }
            let before = start.checked_sub(1).map(|j| chars[j]);
            let after = chars.get(i).copied();
            if let (Some(b), Some(a)) = (before, after) {
                if is_word_char(b) && (is_word_char(a) || a == '<') {
                    out.push('_');
                }
            }
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    out
}

/// Control-flow effect of an instruction, as far as block boundaries care.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    Fallthrough,
    /// Calls return to the next instruction and do not end a block.
    Call,
    CondJump,
    Jump,
    Return,
}

impl FlowKind {
    pub fn ends_block(self) -> bool {
        matches!(self, FlowKind::CondJump | FlowKind::Jump | FlowKind::Return)
    }

    pub fn is_transfer(self) -> bool {
        !matches!(self, FlowKind::Fallthrough)
    }
}

const ARM_CONDS: [&str; 17] = [
    "EQ", "NE", "CS", "HS", "CC", "LO", "MI", "PL", "VS", "VC", "HI", "LS", "GE", "LT", "GT", "LE", "AL",
];

fn is_arm_cond(s: &str) -> bool {
    ARM_CONDS.contains(&s)
}

pub fn flow_kind(arch: ArchId, opcode: &str, operands: &[String]) -> FlowKind {
    let op = opcode.to_ascii_uppercase();
    match arch {
        ArchId::X86 => match op.as_str() {
            "CALL" | "CALLQ" => FlowKind::Call,
            "JMP" | "JMPQ" => FlowKind::Jump,
            "RET" | "RETN" | "RETF" | "RETQ" | "IRET" | "IRETD" | "IRETQ" | "HLT" | "UD2" => FlowKind::Return,
            "LOOP" | "LOOPE" | "LOOPNE" | "LOOPZ" | "LOOPNZ" => FlowKind::CondJump,
            _ if op.starts_with('J') => FlowKind::CondJump,
            _ => FlowKind::Fallthrough,
        },
        ArchId::Arm => {
            let base = op
                .strip_suffix(".W")
                .or_else(|| op.strip_suffix(".N"))
                .unwrap_or(&op);
            let writes_pc = operands.iter().any(|o| mentions_pc(o));
            match base {
                "B" | "BR" => FlowKind::Jump,
                "BL" | "BLX" | "BLR" => FlowKind::Call,
                "RET" | "ERET" => FlowKind::Return,
                "BX" => {
                    if operands.first().is_some_and(|o| o.eq_ignore_ascii_case("LR")) {
                        FlowKind::Return
                    } else {
                        FlowKind::Jump
                    }
                }
                "CBZ" | "CBNZ" | "TBZ" | "TBNZ" => FlowKind::CondJump,
                _ if base.starts_with("B.") && is_arm_cond(&base[2..]) => FlowKind::CondJump,
                _ if base.len() == 3 && base.starts_with('B') && is_arm_cond(&base[1..]) => FlowKind::CondJump,
                _ if base.starts_with("BX") && is_arm_cond(&base[2..]) => FlowKind::CondJump,
                _ if base.starts_with("BLX") && is_arm_cond(&base[3..]) => FlowKind::Call,
                _ if base.starts_with("BL") && is_arm_cond(&base[2..]) => FlowKind::Call,
                _ if (base.starts_with("POP") || base.starts_with("LDM")) && writes_pc => FlowKind::Return,
                _ if base.starts_with("MOV") && operands.first().is_some_and(|o| o.eq_ignore_ascii_case("PC")) => {
                    FlowKind::Return
                }
                _ if base.starts_with("LDR") && operands.first().is_some_and(|o| o.eq_ignore_ascii_case("PC")) => {
                    FlowKind::Jump
                }
                _ => FlowKind::Fallthrough,
            }
        }
    }
}

fn mentions_pc(operand: &str) -> bool {
    operand
        .split(|c: char| !c.is_ascii_alphanumeric())
        .any(|t| t.eq_ignore_ascii_case("PC"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TagKind {
    Const,
    Addr,
    Tag,
    Var,
    Ptr,
}

/// A normalized instruction: one whitespace-free word plus the tags that
/// normalization introduced.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NormalizedInstruction {
    pub word: String,
    pub tags_applied: BTreeSet<TagKind>,
}

impl NormalizedInstruction {
    /// Wraps an already-canonical word, e.g. one read back from a corpus file.
    /// Tags are recovered from the tag markers present in the word.
    pub fn from_word(word: impl Into<String>) -> Self {
        let word = word.into();
        let mut tags_applied = BTreeSet::new();
        if word.contains("<CONST>") {
            tags_applied.insert(TagKind::Const);
        }
        if word.contains("<ADDR>") {
            tags_applied.insert(TagKind::Addr);
        }
        if word.contains("<TAG>") {
            tags_applied.insert(TagKind::Tag);
        }
        if word.contains("<VAR>") {
            tags_applied.insert(TagKind::Var);
        }
        if word.contains("_PTR>") {
            tags_applied.insert(TagKind::Ptr);
        }
        NormalizedInstruction { word, tags_applied }
    }
}

/// Maximal straight-line run of instructions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub instructions: Vec<NormalizedInstruction>,
}

impl BasicBlock {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        BasicBlock {
            instructions: words.into_iter().map(NormalizedInstruction::from_word).collect(),
        }
    }

    pub fn words(&self) -> Vec<String> {
        self.instructions.iter().map(|i| i.word.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionRecord {
    pub name: String,
    pub arch: ArchId,
    pub blocks: Vec<BasicBlock>,
}

impl FunctionRecord {
    pub fn instruction_count(&self) -> usize {
        self.blocks.iter().map(BasicBlock::len).sum()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.blocks
            .iter()
            .flat_map(|b| b.instructions.iter().map(|i| i.word.as_str()))
    }
}

/// Parses a disassembly dump into functions of basic blocks.
///
/// The dump is line oriented: `FUNC name` opens a function, `LBL name:`
/// marks a label, `ENDFUNC` closes the function and any other non-empty line
/// is one instruction. Lines whose first non-blank character is `#` are
/// comments; a `#` later in a line is kept since ARM immediates use it.
///
/// A new block starts at every label and after every jump or return. Calls
/// fall through and stay inside their block.
pub fn parse_listing(text: &str, arch: ArchId) -> Result<Vec<FunctionRecord>> {
    struct Open {
        name: String,
        blocks: Vec<BasicBlock>,
        current: Vec<NormalizedInstruction>,
        line: usize,
    }

    impl Open {
        fn cut(&mut self) {
            if !self.current.is_empty() {
                self.blocks.push(BasicBlock {
                    instructions: std::mem::take(&mut self.current),
                });
            }
        }
    }

    let mut functions = Vec::new();
    let mut open: Option<Open> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let (keyword, rest) = split_first_token(line);

        match keyword {
            "FUNC" => {
                if let Some(f) = &open {
                    return Err(err(format!("FUNC inside unterminated function `{}`", f.name)));
                }
                let name = rest.trim();
                if name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(err("FUNC needs a single-token name".into()));
                }
                open = Some(Open {
                    name: name.to_string(),
                    blocks: Vec::new(),
                    current: Vec::new(),
                    line: line_no,
                });
            }
            "ENDFUNC" => {
                if !rest.trim().is_empty() {
                    return Err(err("unexpected text after ENDFUNC".into()));
                }
                let mut f = open.take().ok_or_else(|| err("ENDFUNC without FUNC".into()))?;
                f.cut();
                if f.blocks.is_empty() {
                    return Err(err(format!("function `{}` has no instructions", f.name)));
                }
                functions.push(FunctionRecord {
                    name: f.name,
                    arch,
                    blocks: f.blocks,
                });
            }
            "LBL" => {
                let f = open.as_mut().ok_or_else(|| err("label outside a function".into()))?;
                let label = rest.trim();
                let name = label
                    .strip_suffix(':')
                    .ok_or_else(|| err(format!("label `{label}` must end with `:`")))?;
                if name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(err("malformed label".into()));
                }
                f.cut();
            }
            _ => {
                let f = open
                    .as_mut()
                    .ok_or_else(|| err("instruction outside a function".into()))?;
                let instr = Instruction::parse(line, arch).map_err(err)?;
                let flow = instr.flow();
                f.current.push(normalize_instruction(&instr));
                if flow.ends_block() {
                    f.cut();
                }
            }
        }
    }

    if let Some(f) = open {
        return Err(Error::Parse {
            line: f.line,
            msg: format!("function `{}` is missing ENDFUNC", f.name),
        });
    }
    Ok(functions)
}

/// Normalizes an instruction and returns its canonical word.
pub fn normalize_instruction(instr: &Instruction) -> NormalizedInstruction {
    let (rewritten, tags_applied) = rewrite_instruction(instr);
    NormalizedInstruction {
        word: canonical_word(&rewritten),
        tags_applied,
    }
}

/// Joins opcode and operands into one token: `MOV EDX, 11E1H` becomes
/// `MOV_EDX,11E1H`. The result is opaque; nothing splits it back apart.
pub fn canonical_word(instr: &Instruction) -> String {
    let mut word: String = instr.opcode.chars().filter(|c| !c.is_whitespace()).collect();
    if !instr.operands.is_empty() {
        word.push('_');
        let ops = instr.operands.join(",");
        word.extend(ops.chars().filter(|c| !c.is_whitespace()));
    }
    word
}

/// Applies the operand rewrite rules, keeping the instruction in its native
/// syntax. `Display` on the result gives the human-readable normalized form.
pub fn rewrite_instruction(instr: &Instruction) -> (Instruction, BTreeSet<TagKind>) {
    let transfer = instr.flow().is_transfer();
    let mut tags = BTreeSet::new();
    let operands = instr
        .operands
        .iter()
        .map(|op| rewrite_operand(op, instr.arch, transfer, &mut tags))
        .collect();
    (
        Instruction {
            opcode: instr.opcode.clone(),
            operands,
            arch: instr.arch,
        },
        tags,
    )
}

#[derive(Debug)]
enum Piece<'a> {
    Term(&'a str),
    Tag(&'a str),
    Delim(char),
}

fn lex_operand(op: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let bytes = op.as_bytes();
    let mut i = 0;
    while i < op.len() {
        let c = op[i..].chars().next().unwrap_or(' ');
        if c == '<' {
            if let Some(end) = op[i..].find('>') {
                let inner = &op[i + 1..i + end];
                if !inner.is_empty() && inner.chars().all(|c| c.is_ascii_uppercase() || c == '_') {
                    pieces.push(Piece::Tag(&op[i..=i + end]));
                    i += end + 1;
                    continue;
                }
            }
        }
        if is_word_char(c) {
            let start = i;
            while i < op.len() && is_word_char(bytes[i] as char) {
                i += 1;
            }
            pieces.push(Piece::Term(&op[start..i]));
        } else {
            pieces.push(Piece::Delim(c));
            i += c.len_utf8();
        }
    }
    pieces
}

fn rewrite_operand(op: &str, arch: ArchId, transfer: bool, tags: &mut BTreeSet<TagKind>) -> String {
    let pieces = lex_operand(op);
    let single_term = pieces.len() == 1 && matches!(pieces[0], Piece::Term(_));

    // For each bracket group, whether it contains a register.
    let mut bracket_has_reg = Vec::new();
    {
        let mut stack: Vec<usize> = Vec::new();
        let mut group_of = Vec::with_capacity(pieces.len());
        for p in &pieces {
            match p {
                Piece::Delim('[') => {
                    stack.push(bracket_has_reg.len());
                    bracket_has_reg.push(false);
                }
                Piece::Delim(']') => {
                    stack.pop();
                }
                Piece::Term(t) if is_register(arch, t) => {
                    if let Some(&g) = stack.last() {
                        bracket_has_reg[g] = true;
                    }
                }
                _ => {}
            }
            group_of.push(stack.last().copied());
        }
        // Re-walk below with group_of.
        let mut out = String::with_capacity(op.len());
        let mut prev_segment = false;
        for (idx, p) in pieces.iter().enumerate() {
            match p {
                Piece::Tag(t) => {
                    out.push_str(t);
                    prev_segment = false;
                }
                Piece::Delim(c) => {
                    out.push(*c);
                    if *c != ':' {
                        prev_segment = false;
                    }
                }
                Piece::Term(t) if t.ends_with('_') && matches!(pieces.get(idx + 1), Some(Piece::Tag(_))) => {
                    // Prefix of an already-normalized label such as `LOC_<TAG>`.
                    out.push_str(t);
                    prev_segment = false;
                }
                Piece::Term(t) => {
                    let after_colon = idx > 0 && matches!(pieces[idx - 1], Piece::Delim(':'));
                    let ctx = TermContext {
                        transfer,
                        bare: single_term,
                        in_bracket: group_of[idx].is_some(),
                        bracket_has_reg: group_of[idx].map(|g| bracket_has_reg[g]).unwrap_or(false),
                        segment_prefixed: after_colon && prev_segment,
                    };
                    out.push_str(&rewrite_term(t, arch, &ctx, tags));
                    prev_segment = arch == ArchId::X86 && is_segment_register(t);
                }
            }
        }
        out
    }
}

struct TermContext {
    transfer: bool,
    bare: bool,
    in_bracket: bool,
    bracket_has_reg: bool,
    segment_prefixed: bool,
}

fn rewrite_term(t: &str, arch: ArchId, ctx: &TermContext, tags: &mut BTreeSet<TagKind>) -> String {
    if is_register(arch, t) {
        return t.to_string();
    }
    if let Some(size) = pointer_size(t) {
        tags.insert(TagKind::Ptr);
        return format!("<{size}_PTR>");
    }
    if is_keyword(t) {
        return t.to_string();
    }
    if let Some(digits) = numeric_digits(t) {
        if (ctx.transfer && ctx.bare) || (ctx.in_bracket && !ctx.bracket_has_reg) || ctx.segment_prefixed && digits > 4
        {
            tags.insert(TagKind::Addr);
            return "<ADDR>".into();
        }
        if digits > 4 {
            tags.insert(TagKind::Const);
            return "<CONST>".into();
        }
        return t.to_string();
    }
    // Symbolic operand.
    if ctx.segment_prefixed {
        tags.insert(TagKind::Addr);
        return "<ADDR>".into();
    }
    if is_stack_var(t) {
        tags.insert(TagKind::Var);
        return "<VAR>".into();
    }
    if let Some(prefix) = generated_label_prefix(t) {
        tags.insert(TagKind::Tag);
        return format!("{prefix}<TAG>");
    }
    if ctx.in_bracket && !ctx.bracket_has_reg {
        tags.insert(TagKind::Addr);
        return "<ADDR>".into();
    }
    if ctx.in_bracket || ctx.transfer {
        // Named stack slots and named call/branch targets carry meaning.
        return t.to_string();
    }
    tags.insert(TagKind::Tag);
    "<TAG>".into()
}

/// Number of significant characters in a numeric literal, excluding radix
/// markers (`0x` prefix, `h` suffix), or `None` if `t` is not a literal.
fn numeric_digits(t: &str) -> Option<usize> {
    let b = t.as_bytes();
    if b.is_empty() || !b[0].is_ascii_digit() {
        return None;
    }
    if b.len() > 2 && b[0] == b'0' && (b[1] == b'x' || b[1] == b'X') {
        let body = &t[2..];
        return body.chars().all(|c| c.is_ascii_hexdigit()).then_some(body.len());
    }
    if t.chars().all(|c| c.is_ascii_digit()) {
        return Some(t.len());
    }
    let last = b[b.len() - 1];
    if last == b'h' || last == b'H' {
        let body = &t[..t.len() - 1];
        return body.chars().all(|c| c.is_ascii_hexdigit()).then_some(body.len());
    }
    None
}

fn pointer_size(t: &str) -> Option<String> {
    let upper = t.to_ascii_uppercase();
    let size = upper.strip_suffix("_PTR")?;
    matches!(
        size,
        "BYTE" | "WORD" | "DWORD" | "QWORD" | "TBYTE" | "FWORD" | "OWORD" | "XMMWORD" | "YMMWORD" | "ZMMWORD"
    )
    .then(|| size.to_string())
}

fn is_keyword(t: &str) -> bool {
    matches!(
        t.to_ascii_uppercase().as_str(),
        "SHORT" | "NEAR" | "FAR" | "PTR" | "OFFSET" | "LSL" | "LSR" | "ASR" | "ROR" | "RRX" | "UXTW" | "SXTW" | "UXTB" | "SXTB"
    )
}

fn is_stack_var(t: &str) -> bool {
    let upper = t.to_ascii_uppercase();
    ["VAR_", "ARG_"]
        .iter()
        .any(|p| upper.strip_prefix(p).is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_hexdigit())))
}

/// `LOC_9BA3B` → `Some("LOC_")`. The suffix must look like an address: at
/// least four hex characters including a digit.
fn generated_label_prefix(t: &str) -> Option<&str> {
    let cut = t.rfind('_')?;
    let (head, suffix) = (&t[..=cut], &t[cut + 1..]);
    let head_ok = head.len() > 1 && head[..head.len() - 1].chars().last().is_some_and(|c| c.is_ascii_alphabetic());
    let suffix_ok = suffix.len() >= 4
        && suffix.chars().all(|c| c.is_ascii_hexdigit())
        && suffix.chars().any(|c| c.is_ascii_digit());
    (head_ok && suffix_ok).then_some(head)
}

fn is_segment_register(t: &str) -> bool {
    matches!(t.to_ascii_uppercase().as_str(), "CS" | "DS" | "ES" | "FS" | "GS" | "SS")
}

fn numbered(t: &str, prefix: &str, max: u32) -> bool {
    t.strip_prefix(prefix)
        .filter(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()) && !(n.len() > 1 && n.starts_with('0')))
        .and_then(|n| n.parse::<u32>().ok())
        .is_some_and(|n| n <= max)
}

pub fn is_register(arch: ArchId, t: &str) -> bool {
    let u = t.to_ascii_uppercase();
    let u = u.as_str();
    match arch {
        ArchId::X86 => {
            const NAMED: &[&str] = &[
                "RAX", "RBX", "RCX", "RDX", "RSI", "RDI", "RBP", "RSP", "EAX", "EBX", "ECX", "EDX", "ESI", "EDI",
                "EBP", "ESP", "AX", "BX", "CX", "DX", "SI", "DI", "BP", "SP", "AL", "BL", "CL", "DL", "AH", "BH",
                "CH", "DH", "SIL", "DIL", "BPL", "SPL", "RIP", "EIP", "IP", "CS", "DS", "ES", "FS", "GS", "SS", "ST",
            ];
            if NAMED.contains(&u) {
                return true;
            }
            if let Some(rest) = u.strip_prefix('R') {
                let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
                let tail = &rest[digits.len()..];
                if let Ok(n) = digits.parse::<u32>() {
                    if (8..=15).contains(&n) && matches!(tail, "" | "D" | "W" | "B" | "L") {
                        return true;
                    }
                }
            }
            numbered(u, "XMM", 31)
                || numbered(u, "YMM", 31)
                || numbered(u, "ZMM", 31)
                || numbered(u, "MM", 7)
                || numbered(u, "ST", 7)
                || numbered(u, "K", 7)
                || numbered(u, "CR", 15)
                || numbered(u, "DR", 7)
        }
        ArchId::Arm => {
            const NAMED: &[&str] = &[
                "SP", "LR", "PC", "FP", "IP", "SB", "SL", "APSR", "CPSR", "SPSR", "FPSCR", "XZR", "WZR", "WSP",
            ];
            NAMED.contains(&u)
                || numbered(u, "R", 15)
                || numbered(u, "X", 30)
                || numbered(u, "W", 30)
                || numbered(u, "S", 31)
                || numbered(u, "D", 31)
                || numbered(u, "Q", 31)
                || numbered(u, "V", 31)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(line: &str) -> String {
        let instr = Instruction::parse(line, ArchId::X86).unwrap();
        rewrite_instruction(&instr).0.to_string()
    }

    #[test]
    fn normalizes_reference_snippet() {
        let cases = [
            ("MOV EDX, 11E1H", "MOV EDX, 11E1H"),
            ("MOV ECX, 0FFFFFFFH", "MOV ECX, <CONST>"),
            ("JLE LOC_9BA3B", "JLE LOC_<TAG>"),
            ("CALL CRYPTO_FREE", "CALL CRYPTO_FREE"),
            ("MOV RCX, CS:GLIBC_2_5", "MOV RCX, CS:<ADDR>"),
            ("MOV [RSP+VAR_58], RDX", "MOV [RSP+<VAR>], RDX"),
        ];
        for (input, expected) in cases {
            assert_eq!(norm(input), expected, "{input}");
        }
    }

    #[test]
    fn digit_counting_ignores_radix_markers() {
        assert_eq!(numeric_digits("0FFFFFFFH"), Some(8));
        assert_eq!(numeric_digits("11E1H"), Some(4));
        assert_eq!(numeric_digits("0x1234"), Some(4));
        assert_eq!(numeric_digits("0x12345"), Some(5));
        assert_eq!(numeric_digits("12345"), Some(5));
        assert_eq!(numeric_digits("6bh"), Some(2));
        assert_eq!(numeric_digits("EAX"), None);
        assert_eq!(numeric_digits("1XYZ"), None);
        assert_eq!(norm("ADD EAX, 0x12345"), "ADD EAX, <CONST>");
        assert_eq!(norm("ADD EAX, 9999"), "ADD EAX, 9999");
        assert_eq!(norm("ADD EAX, 10000"), "ADD EAX, <CONST>");
    }

    #[test]
    fn pointer_sizes_and_keywords() {
        assert_eq!(norm("MOVZX EAX, BYTE PTR [RAX+6BH]"), "MOVZX EAX, <BYTE_PTR>[RAX+6BH]");
        assert_eq!(norm("MOV DWORD PTR [RBP-4], 0"), "MOV <DWORD_PTR>[RBP-4], 0");
        assert_eq!(norm("JZ SHORT LOC_401A2C"), "JZ SHORT_LOC_<TAG>");
    }

    #[test]
    fn addresses() {
        assert_eq!(norm("CALL 401000H"), "CALL <ADDR>");
        assert_eq!(norm("MOV EAX, [601040H]"), "MOV EAX, [<ADDR>]");
        assert_eq!(norm("MOV EAX, DS:GLOBAL_COUNTER"), "MOV EAX, DS:<ADDR>");
        assert_eq!(norm("MOV RAX, FS:28H"), "MOV RAX, FS:28H");
        assert_eq!(norm("LEA RSI, ASTRINGLITERAL"), "LEA RSI, <TAG>");
        assert_eq!(norm("MOV RAX, [RBP+NAME]"), "MOV RAX, [RBP+NAME]");
        assert_eq!(norm("CALL STARTSWITH_0"), "CALL STARTSWITH_0");
    }

    #[test]
    fn arm_operands() {
        let n = |l: &str| rewrite_instruction(&Instruction::parse(l, ArchId::Arm).unwrap()).0.to_string();
        assert_eq!(n("LDRB.W R3, [R3, #0X37]"), "LDRB.W R3, [R3,#0X37]");
        assert_eq!(n("CMP R3, #0"), "CMP R3, #0");
        assert_eq!(n("BEQ LOC_1A2B4"), "BEQ LOC_<TAG>");
        assert_eq!(n("LDR R0, =SOMESYMBOL"), "LDR R0, =<TAG>");
        assert_eq!(n("MOVW R0, #0X12345"), "MOVW R0, #<CONST>");
        assert_eq!(n("BL STARTSWITH_0"), "BL STARTSWITH_0");
    }

    #[test]
    fn canonical_words() {
        let w = |l: &str| normalize_instruction(&Instruction::parse(l, ArchId::X86).unwrap()).word;
        assert_eq!(w("MOV EDX, 11E1H"), "MOV_EDX,11E1H");
        assert_eq!(w("MOV ECX, 0FFFFFFFH"), "MOV_ECX,<CONST>");
        assert_eq!(w("RET"), "RET");
        assert_eq!(w("REP MOVSB"), "REP_MOVSB");
    }

    #[test]
    fn tags_are_recorded() {
        let n = normalize_instruction(&Instruction::parse("MOV ECX, 0FFFFFFFH", ArchId::X86).unwrap());
        assert_eq!(n.tags_applied.iter().copied().collect::<Vec<_>>(), vec![TagKind::Const]);
        assert_eq!(NormalizedInstruction::from_word(n.word.clone()), n);
    }

    #[test]
    fn flow_classification() {
        let k = |arch, l: &str| Instruction::parse(l, arch).unwrap().flow();
        assert_eq!(k(ArchId::X86, "JMP LOC_1234"), FlowKind::Jump);
        assert_eq!(k(ArchId::X86, "JNZ LOC_1234"), FlowKind::CondJump);
        assert_eq!(k(ArchId::X86, "CALL FOO"), FlowKind::Call);
        assert_eq!(k(ArchId::X86, "RETN"), FlowKind::Return);
        assert_eq!(k(ArchId::Arm, "BLE LOC_1234"), FlowKind::CondJump);
        assert_eq!(k(ArchId::Arm, "BLT LOC_1234"), FlowKind::CondJump);
        assert_eq!(k(ArchId::Arm, "BL FOO"), FlowKind::Call);
        assert_eq!(k(ArchId::Arm, "BLEQ FOO"), FlowKind::Call);
        assert_eq!(k(ArchId::Arm, "BX LR"), FlowKind::Return);
        assert_eq!(k(ArchId::Arm, "POP {R4, R7, PC}"), FlowKind::Return);
        assert_eq!(k(ArchId::Arm, "B.NE LOC_1234"), FlowKind::CondJump);
        assert_eq!(k(ArchId::Arm, "CBZ R0, LOC_1234"), FlowKind::CondJump);
        assert_eq!(k(ArchId::Arm, "ADD R0, R1, R2"), FlowKind::Fallthrough);
    }

    #[test]
    fn empty_listing() {
        assert!(parse_listing("", ArchId::X86).unwrap().is_empty());
        assert!(parse_listing("# only a comment\n\n", ArchId::X86).unwrap().is_empty());
    }

    #[test]
    fn straight_line_function() {
        let text = "FUNC f\nPUSH RBP\nMOV RBP, RSP\nPOP RBP\nENDFUNC\n";
        let fns = parse_listing(text, ArchId::X86).unwrap();
        assert_eq!(fns.len(), 1);
        assert_eq!(fns[0].name, "f");
        assert_eq!(fns[0].blocks.len(), 1);
        assert_eq!(fns[0].blocks[0].len(), 3);
    }

    #[test]
    fn conditional_branch_splits_into_three_blocks() {
        // [CMP, JLE] | [MOV, CALL] | label -> [RET]
        let text = "\
FUNC g
CMP EAX, 0
JLE LOC_9BA3B
MOV EAX, 1
CALL CRYPTO_FREE
LBL LOC_9BA3B:
RET
ENDFUNC
";
        let fns = parse_listing(text, ArchId::X86).unwrap();
        let sizes: Vec<_> = fns[0].blocks.iter().map(BasicBlock::len).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        assert_eq!(fns[0].blocks[0].instructions[1].word, "JLE_LOC_<TAG>");
    }

    #[test]
    fn leading_and_repeated_labels_make_no_empty_blocks() {
        let text = "FUNC h\nLBL A:\nLBL B:\nNOP\nJMP A\nLBL C:\nENDFUNC\n";
        let fns = parse_listing(text, ArchId::X86).unwrap();
        assert_eq!(fns[0].blocks.len(), 1);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("MOV EAX, 1\n", 1),
            ("FUNC a\nMOV EAX, [RBX\nENDFUNC\n", 2),
            ("FUNC a\nNOP\n", 1),
            ("FUNC a\nENDFUNC\n", 2),
            ("ENDFUNC\n", 1),
            ("FUNC a\nNOP\nFUNC b\n", 3),
            ("FUNC a\nLBL nocolon\nENDFUNC\n", 2),
            ("FUNC a\n, EAX\nENDFUNC\n", 2),
        ];
        for (text, line) in cases {
            match parse_listing(text, ArchId::X86) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_arch_is_rejected() {
        assert!(matches!("mips".parse::<ArchId>(), Err(Error::UnsupportedArch(_))));
        assert_eq!("ARM".parse::<ArchId>().unwrap(), ArchId::Arm);
        assert_eq!(ArchId::X86.to_string(), "x86");
    }

    fn operand_strategy() -> impl Strategy<Value = String> {
        prop_oneof![
            prop::sample::select(vec!["EAX", "RBX", "RSP", "AL", "R8D", "XMM1"]).prop_map(String::from),
            (0u64..0xFFFF_FFFF).prop_map(|n| format!("{n:X}H")),
            (0u64..1_000_000).prop_map(|n| n.to_string()),
            (0u64..0xFFFFF).prop_map(|n| format!("0x{n:x}")),
            (0u32..0xFFFFF).prop_map(|n| format!("LOC_{n:X}")),
            (0u32..0x200).prop_map(|n| format!("[RSP+VAR_{n:X}]")),
            (0u32..0x200).prop_map(|n| format!("[RBP-{n:X}H]")),
            "[A-Z]{3,8}".prop_map(|s| format!("CS:{s}")),
            "[A-Z]{3,8}".prop_map(|s| format!("BYTE PTR [RAX+{s}]")),
            "[A-Z][A-Z_]{2,8}",
            (0u64..0xFFFFFF).prop_map(|n| format!("[{n:X}H]")),
        ]
    }

    fn instruction_strategy() -> impl Strategy<Value = String> {
        (
            prop::sample::select(vec!["MOV", "ADD", "LEA", "CALL", "JMP", "JLE", "CMP", "PUSH", "RET"]),
            prop::collection::vec(operand_strategy(), 0..3),
        )
            .prop_map(|(op, operands)| {
                if operands.is_empty() {
                    op.to_string()
                } else {
                    format!("{op} {}", operands.join(", "))
                }
            })
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(line in instruction_strategy()) {
            let instr = Instruction::parse(&line, ArchId::X86).unwrap();
            let (once, _) = rewrite_instruction(&instr);
            let reparsed = Instruction::parse(&once.to_string(), ArchId::X86).unwrap();
            let (twice, _) = rewrite_instruction(&reparsed);
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(canonical_word(&once), canonical_word(&twice));
        }

        #[test]
        fn words_are_single_tokens_without_long_digit_runs(line in instruction_strategy()) {
            let instr = Instruction::parse(&line, ArchId::X86).unwrap();
            let (rewritten, _) = rewrite_instruction(&instr);
            let word = canonical_word(&rewritten);
            prop_assert!(!word.is_empty() && !word.contains(char::is_whitespace));
            for op in &rewritten.operands {
                for piece in lex_operand(op) {
                    if let Piece::Term(t) = piece {
                        if let Some(d) = numeric_digits(t) {
                            prop_assert!(d <= 4, "{} kept in {}", t, word);
                        }
                    }
                }
            }
        }

        #[test]
        fn blocks_have_no_interior_boundaries(lines in prop::collection::vec(
            prop_oneof![instruction_strategy(), "[A-Z]{3,6}".prop_map(|l| format!("LBL {l}:"))], 1..40)) {
            let mut text = String::from("FUNC f\nNOP\n");
            for l in &lines {
                text.push_str(l);
                text.push('\n');
            }
            text.push_str("ENDFUNC\n");
            let fns = parse_listing(&text, ArchId::X86).unwrap();
            let total: usize = fns[0].blocks.iter().map(BasicBlock::len).sum();
            let expected = 1 + lines.iter().filter(|l| !l.starts_with("LBL")).count();
            prop_assert_eq!(total, expected);
            for block in &fns[0].blocks {
                prop_assert!(!block.is_empty());
                for ins in &block.instructions[..block.len() - 1] {
                    let op = ins.word.split('_').next().unwrap();
                    prop_assert!(!matches!(op, "JMP" | "JLE" | "RET"), "interior transfer {}", ins.word);
                }
            }
        }
    }
}
