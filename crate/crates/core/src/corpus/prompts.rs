/// Number of built-in reasoning perspectives.
pub const NUM_PERSPECTIVES: usize = 8;

const PLACEHOLDER: &str = "{question}";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerspectivePrompt {
    pub perspective_id: usize,
    pub name: &'static str,
    pub template: String,
}

impl PerspectivePrompt {
    pub fn render(&self, question: &str) -> String {
        self.template.replacen(PLACEHOLDER, question, 1)
    }
}

const STYLES: [(&str, &str); NUM_PERSPECTIVES] = [
    (
        "Formal Symbolic",
        "Solve the problem using strict formal reasoning. Translate all relevant information into \
         symbolic or logical representations and follow a sequence of explicit, verifiable \
         deductions. Intuitive leaps are avoided in favor of equations, logic operators, or formal \
         inference rules. The final answer is presented after the last formal step.",
    ),
    (
        "Intuitive",
        "Solve the problem using intuitive and heuristic reasoning. Concepts are explained in \
         simple, human-like terms, relying on everyday experience and plausible expectations. \
         Heavy formalism is avoided in favor of natural understanding. The final answer is stated \
         after the intuitive reasoning process.",
    ),
    (
        "Decomposition",
        "Break the problem into small, concrete sub-goals. Each step explicitly addresses a \
         component of the problem and incrementally leads toward the solution. Reasoning steps \
         are numbered (e.g., Step 1, Step 2, ...) without skipping intermediate logic. The final \
         answer is provided at the end.",
    ),
    (
        "Planning",
        "Begin with a high-level plan outlining the strategy for solving the problem. Each \
         component of the plan is then expanded into detailed reasoning. The structure is made \
         explicit in the order of Plan, Execution, and Answer. The final answer follows the \
         completed breakdown.",
    ),
    (
        "Analogy",
        "Solve the problem by constructing an analogy to a simpler or more familiar situation. \
         The analogy is explained clearly, and each of its elements is mapped back to the \
         original problem. The inferred solution from the analogy leads to the final answer.",
    ),
    (
        "Socratic",
        "Employ a self-questioning approach to guide reasoning. At each step, guiding questions \
         (e.g., \"What is known?\", \"What follows?\", \"Why?\") are posed and explicitly \
         answered. This iterative questioning drives the reasoning process, culminating in the \
         final answer.",
    ),
    (
        "Contrastive",
        "Solve the problem by comparing multiple candidate explanations or answers. Each option \
         is analyzed in terms of its plausibility, strengths, and weaknesses. Through contrast \
         and elimination, the most appropriate answer is identified and stated.",
    ),
    (
        "Counterfactual",
        "Apply counterfactual reasoning by considering how the outcome would change if certain \
         conditions were altered. Alternative scenarios are analyzed to reveal critical \
         dependencies. These insights are then used to determine the correct answer under the \
         actual conditions. The final answer is stated accordingly.",
    ),
];

/// The eight built-in perspective prompts, ids `0..8`.
pub fn builtin_prompts() -> Vec<PerspectivePrompt> {
    STYLES
        .iter()
        .enumerate()
        .map(|(perspective_id, (name, style))| PerspectivePrompt {
            perspective_id,
            name,
            template: format!(
                "{style}\n\nProblem: {PLACEHOLDER}\n\nWrite the final answer on the last line \
                 in the form `#### <answer>`."
            ),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn eight_contiguous_prompts_with_one_placeholder() {
        let prompts = builtin_prompts();
        assert_eq!(prompts.len(), NUM_PERSPECTIVES);
        for (i, p) in prompts.iter().enumerate() {
            assert_eq!(p.perspective_id, i);
            assert_eq!(p.template.matches(PLACEHOLDER).count(), 1);
        }
    }

    #[test]
    fn rendered_prompts_are_distinct() {
        let rendered: BTreeSet<String> = builtin_prompts()
            .iter()
            .map(|p| p.render("What is 2+2?"))
            .collect();
        assert_eq!(rendered.len(), NUM_PERSPECTIVES);
        assert!(rendered.iter().all(|r| r.contains("What is 2+2?")));
    }
}
