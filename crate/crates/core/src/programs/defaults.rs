//! Starting programs for every stage, before any optimization.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Field, PromptProgram};
use crate::error::ModelError;
use crate::model::Subtask;

pub const ST1_INTERPRETATION: &str = include_str!("templates/st1_interpretation.txt");
pub const ST2_ESSENTIAL_REASONING: &str = include_str!("templates/st2_essential_reasoning.txt");
pub const ST2_NONESSENTIAL_REASONING: &str =
    include_str!("templates/st2_nonessential_reasoning.txt");
pub const ST2_CLASSIFIER: &str = include_str!("templates/st2_classifier.txt");
pub const ST3_ANSWER: &str = include_str!("templates/st3_answer.txt");
pub const ST3_CONSOLIDATION: &str = include_str!("templates/st3_consolidation.txt");
pub const ST4_ALIGN: &str = include_str!("templates/st4_align.txt");
pub const ST4_REFLECT: &str = include_str!("templates/st4_reflect.txt");
pub const ST4_VERIFY: &str = include_str!("templates/st4_verify.txt");

const NARRATIVE: (&str, &str) = ("patient_narrative", "The patient's free-text narrative.");
const PATIENT_Q: (&str, &str) = ("patient_question", "The question as written by the patient.");
const CLINICIAN_Q: (&str, &str) = (
    "clinician_question",
    "The clinician's interpretation of the patient question.",
);
const NOTES: (&str, &str) = (
    "clinical_notes",
    "Clinical note excerpt, one numbered sentence per line (`<id>: <sentence>`).",
);
const ANSWER_SENTENCES: (&str, &str) = (
    "answer_sentences",
    "Answer sentences, one numbered sentence per line (`<id>: <sentence>`).",
);

const ALIGNMENT_FORMAT: &str = "One line per answer sentence, every answer sentence listed: \
     `answer_sentence_k: [note_ids] (confidence=[scores])`, scores in [0, 1] in the same order as the ids.";

fn fields(specs: &[(&str, &str)]) -> Vec<Field> {
    specs.iter().map(|(n, d)| Field::new(n, d)).collect()
}

fn program(name: &str, instruction: &str, inputs: &[(&str, &str)], outputs: &[(&str, &str)], cot: bool) -> PromptProgram {
    PromptProgram {
        name: name.to_string(),
        instruction: instruction.trim_end().to_string(),
        input_fields: fields(inputs),
        output_fields: fields(outputs),
        demos: Vec::new(),
        chain_of_thought: cot,
    }
}

pub fn st1_interpretation() -> PromptProgram {
    program(
        "st1.interpretation",
        ST1_INTERPRETATION,
        &[NARRATIVE, PATIENT_Q],
        &[("clinician_question", "Concise clinician question (≤15 words) ending with a question mark.")],
        true,
    )
}

fn reasoning_program(name: &str, instruction: &str) -> PromptProgram {
    program(
        name,
        instruction,
        &[NARRATIVE, PATIENT_Q, CLINICIAN_Q, ("note_sentence", "One clinical note sentence.")],
        &[("reasoning", "Two or three sentences of reasoning.")],
        false,
    )
}

pub fn st2_essential_reasoning() -> PromptProgram {
    reasoning_program("st2.essential_reasoning", ST2_ESSENTIAL_REASONING)
}

pub fn st2_nonessential_reasoning() -> PromptProgram {
    reasoning_program("st2.nonessential_reasoning", ST2_NONESSENTIAL_REASONING)
}

pub fn st2_classifier() -> PromptProgram {
    program(
        "st2.classifier",
        ST2_CLASSIFIER,
        &[NARRATIVE, PATIENT_Q, CLINICIAN_Q, NOTES],
        &[(
            "verdicts",
            "One line per note sentence, every sentence listed: \
             `<id>: <sentence> -> essential|irrelevant -> <score 0-10> -> <reasoning>`.",
        )],
        false,
    )
}

pub fn st3_answer() -> PromptProgram {
    program(
        "st3.answer",
        ST3_ANSWER,
        &[
            NARRATIVE,
            PATIENT_Q,
            CLINICIAN_Q,
            NOTES,
            (
                "essential_sentences",
                "The note sentences identified as essential evidence; ground the answer on these.",
            ),
        ],
        &[("answer", "Concise grounded answer (≤75 words), no citation markers.")],
        false,
    )
}

pub fn st3_consolidation() -> PromptProgram {
    program(
        "st3.consolidation",
        ST3_CONSOLIDATION,
        &[
            PATIENT_Q,
            NOTES,
            ("candidate_answers", "Candidate answers, one per block, numbered."),
        ],
        &[("answer", "The final consolidated answer (≤75 words).")],
        false,
    )
}

const ST4_INPUTS: [(&str, &str); 5] = [NARRATIVE, PATIENT_Q, CLINICIAN_Q, NOTES, ANSWER_SENTENCES];

pub fn st4_align() -> PromptProgram {
    program("st4.align", ST4_ALIGN, &ST4_INPUTS, &[("alignment", ALIGNMENT_FORMAT)], false)
}

pub fn st4_reflect() -> PromptProgram {
    let mut inputs = ST4_INPUTS.to_vec();
    inputs.push(("initial_alignment", "Initial alignment from Stage A."));
    program("st4.reflect", ST4_REFLECT, &inputs, &[("alignment", ALIGNMENT_FORMAT)], false)
}

pub fn st4_verify() -> PromptProgram {
    let mut inputs = ST4_INPUTS.to_vec();
    inputs.push(("reflected_alignment", "Reflected alignment from Stage B."));
    program("st4.verify", ST4_VERIFY, &inputs, &[("alignment", ALIGNMENT_FORMAT)], false)
}

const SCORE_FIELD: (&str, &str) = ("score", "A single number between 0 and 1.");

pub fn judge_st1_semantic() -> PromptProgram {
    program(
        "judge.st1.semantic",
        "You are grading a clinician question written from a patient narrative. \
         Rate how well the predicted question asks for the same clinical information as the \
         reference question (semantic equivalence, not wording). 1 means equivalent, 0 means unrelated.",
        &[
            ("reference_question", "The reference clinician question."),
            ("predicted_question", "The question to grade."),
        ],
        &[SCORE_FIELD],
        false,
    )
}

pub fn judge_st3_faithfulness() -> PromptProgram {
    program(
        "judge.st3.faithfulness",
        "You are grading a clinical answer. Rate whether every statement in the answer is \
         supported by the clinical note excerpt. 1 means fully supported, 0 means unsupported or contradicted.",
        &[NOTES, ("answer", "The answer to grade.")],
        &[SCORE_FIELD],
        false,
    )
}

pub fn judge_st3_completeness() -> PromptProgram {
    program(
        "judge.st3.completeness",
        "You are grading a clinical answer. Rate what fraction of the medical concepts in the \
         reference answer are covered by the answer. 1 means all concepts covered, 0 means none.",
        &[
            ("reference_answer", "The reference answer."),
            ("answer", "The answer to grade."),
        ],
        &[SCORE_FIELD],
        false,
    )
}

pub fn judge_st3_coherence() -> PromptProgram {
    program(
        "judge.st3.coherence",
        "You are grading a clinical answer. Rate its structure and register: clear, well-ordered \
         professional clinical prose whose last sentence answers the question. 1 means excellent, 0 means incoherent.",
        &[PATIENT_Q, ("answer", "The answer to grade.")],
        &[SCORE_FIELD],
        false,
    )
}

pub fn instruction_proposer() -> PromptProgram {
    program(
        "optimizer.proposer",
        "You improve instructions for a language-model program. Given the current instruction \
         and example inputs with their expected outputs, write alternative instructions that keep \
         every hard constraint (word limits, output formats) but may rephrase, reorder, add \
         clarifying guidance, or emphasize common failure modes. Each variant must be complete \
         and self-contained.",
        &[
            ("current_instruction", "The instruction to improve."),
            ("examples", "Example inputs and expected outputs."),
            ("variant_count", "How many variants to write."),
        ],
        &[(
            "variants",
            "Each variant starts with a header line `### Variant <n>` followed by the full instruction text.",
        )],
        false,
    )
}

/// Every program one pipeline run can use, keyed by role.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramSet {
    pub st1: PromptProgram,
    pub st2_essential_reasoning: PromptProgram,
    pub st2_nonessential_reasoning: PromptProgram,
    pub st2: PromptProgram,
    pub st3: PromptProgram,
    pub st3_consolidation: PromptProgram,
    pub st4_align: PromptProgram,
    pub st4_reflect: PromptProgram,
    pub st4_verify: PromptProgram,
    pub judge_st1_semantic: PromptProgram,
    pub judge_st3_faithfulness: PromptProgram,
    pub judge_st3_completeness: PromptProgram,
    pub judge_st3_coherence: PromptProgram,
    pub proposer: PromptProgram,
}

impl Default for ProgramSet {
    fn default() -> Self {
        Self {
            st1: st1_interpretation(),
            st2_essential_reasoning: st2_essential_reasoning(),
            st2_nonessential_reasoning: st2_nonessential_reasoning(),
            st2: st2_classifier(),
            st3: st3_answer(),
            st3_consolidation: st3_consolidation(),
            st4_align: st4_align(),
            st4_reflect: st4_reflect(),
            st4_verify: st4_verify(),
            judge_st1_semantic: judge_st1_semantic(),
            judge_st3_faithfulness: judge_st3_faithfulness(),
            judge_st3_completeness: judge_st3_completeness(),
            judge_st3_coherence: judge_st3_coherence(),
            proposer: instruction_proposer(),
        }
    }
}

impl ProgramSet {
    fn slots(&mut self) -> [&mut PromptProgram; 14] {
        [
            &mut self.st1,
            &mut self.st2_essential_reasoning,
            &mut self.st2_nonessential_reasoning,
            &mut self.st2,
            &mut self.st3,
            &mut self.st3_consolidation,
            &mut self.st4_align,
            &mut self.st4_reflect,
            &mut self.st4_verify,
            &mut self.judge_st1_semantic,
            &mut self.judge_st3_faithfulness,
            &mut self.judge_st3_completeness,
            &mut self.judge_st3_coherence,
            &mut self.proposer,
        ]
    }

    /// The program the optimizer tunes for `subtask`.
    pub fn optimized_slot(&mut self, subtask: Subtask) -> &mut PromptProgram {
        match subtask {
            Subtask::Interpretation => &mut self.st1,
            Subtask::Evidence => &mut self.st2,
            Subtask::Answer => &mut self.st3,
            Subtask::Alignment => &mut self.st4_align,
        }
    }

    pub fn optimized(&self, subtask: Subtask) -> &PromptProgram {
        match subtask {
            Subtask::Interpretation => &self.st1,
            Subtask::Evidence => &self.st2,
            Subtask::Answer => &self.st3,
            Subtask::Alignment => &self.st4_align,
        }
    }

    /// Defaults overridden by files in `dir`: `<program name>.json` for any
    /// slot, then `<st1..st4>.optimized` for the optimized slot.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, ModelError> {
        let dir = dir.as_ref();
        let mut set = Self::default();
        if !dir.is_dir() {
            return Ok(set);
        }
        for slot in set.slots() {
            let path = dir.join(format!("{}.json", slot.name));
            if path.is_file() {
                *slot = PromptProgram::load(&path)?;
            }
        }
        for subtask in Subtask::ALL {
            let path = dir.join(format!("{}.optimized", subtask.label()));
            if path.is_file() {
                *set.optimized_slot(subtask) = PromptProgram::load(&path)?;
            }
        }
        Ok(set)
    }

    /// Content hashes of every program, keyed by program name.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        let mut copy = self.clone();
        copy.slots()
            .iter()
            .map(|p| (p.name.clone(), p.content_hash()))
            .collect()
    }

    /// Programs used by `subtask`'s pipeline.
    pub fn for_subtask(&self, subtask: Subtask) -> Vec<&PromptProgram> {
        match subtask {
            Subtask::Interpretation => vec![&self.st1],
            Subtask::Evidence => vec![&self.st2],
            Subtask::Answer => vec![&self.st3, &self.st3_consolidation],
            Subtask::Alignment => vec![&self.st4_align, &self.st4_reflect, &self.st4_verify],
        }
    }
}
