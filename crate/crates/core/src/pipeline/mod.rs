//! The three prompting stages (formulate, refine, realize), the single-call
//! baseline, and strategy distillation from `-O3` pairs.

pub mod parse;
pub mod prompts;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::analysis::{collect_analysis, render_bundle, AnalysisBundle, AnalysisError, AnalysisNameMap};
use crate::ir::{enforce_token_cap, validate_ir, IrError, IrPair, IrProgram, Origin, Provenance};
use crate::kb::KnowledgeBase;
use crate::llm::{LlmBackend, LlmError, Purpose};
use crate::retrieval::{resolve_with_trace, ActionRetrieval, RetrievalError, TfIdfIndex};
use crate::strategy::{OptimizationStrategy, Stage};
use crate::toolchain::ToolchainConfig;
pub use parse::ParseError;
pub use prompts::{PromptError, StagePromptSet, TemplateKind};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("{stage} expects a {expected:?} strategy")]
    StageOrder { stage: &'static str, expected: Stage },
    #[error("distillation needs an -O3 reference pair")]
    NotO3Pair,
}

impl PipelineError {
    /// Short machine-readable kind used in batch records.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Llm(LlmError::ReplayMiss(_)) => "replay_miss",
            PipelineError::Llm(LlmError::RateLimited(_)) => "rate_limited",
            PipelineError::Llm(_) => "backend_error",
            PipelineError::Parse(ParseError::MalformedStrategy { .. }) => "malformed_strategy",
            PipelineError::Parse(ParseError::NoCodeRegion { .. }) => "no_code_region",
            PipelineError::Prompt(_) => "prompt_error",
            PipelineError::Analysis(_) => "analysis_error",
            PipelineError::Retrieval(_) => "retrieval_error",
            PipelineError::Ir(e) => e.kind(),
            PipelineError::StageOrder { .. } => "stage_order",
            PipelineError::NotO3Pair => "not_o3_pair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum IrValidity {
    Valid,
    Invalid(String),
    Unchecked(String),
}

/// An IR program produced by a model plus the verifier's opinion of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedIr {
    pub program: IrProgram,
    pub validity: IrValidity,
}

pub fn check_validity(program: &IrProgram, toolchain: &ToolchainConfig) -> IrValidity {
    match validate_ir(program, toolchain) {
        Ok(()) => IrValidity::Valid,
        Err(IrError::InvalidIr(msg)) => IrValidity::Invalid(msg),
        Err(e) => IrValidity::Unchecked(e.to_string()),
    }
}

/// Everything a full pipeline run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub initial: OptimizationStrategy,
    pub retrieval: Vec<ActionRetrieval>,
    pub analyses: BTreeSet<String>,
    pub bundle: AnalysisBundle,
    pub refined: OptimizationStrategy,
    pub optimized: GeneratedIr,
}

/// One training example: unoptimized IR, `-O3` IR, and the strategy linking them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetTriple {
    pub unopt: String,
    pub opt: String,
    pub strategy: OptimizationStrategy,
}

pub struct Pipeline<'a> {
    pub backend: &'a dyn LlmBackend,
    pub prompts: &'a StagePromptSet,
    pub toolchain: &'a ToolchainConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(backend: &'a dyn LlmBackend, prompts: &'a StagePromptSet, toolchain: &'a ToolchainConfig) -> Self {
        Pipeline {
            backend,
            prompts,
            toolchain,
        }
    }

    pub fn formulate(&self, program: &IrProgram) -> Result<OptimizationStrategy, PipelineError> {
        let prompt = self.prompts.formulation(&program.text)?;
        let response = self.backend.ask(prompt, Purpose::Formulation)?;
        Ok(parse::parse_steps(&response)?)
    }

    pub fn refine(
        &self,
        program: &IrProgram,
        strategy: &OptimizationStrategy,
        bundle: &AnalysisBundle,
    ) -> Result<OptimizationStrategy, PipelineError> {
        if strategy.stage != Stage::Initial {
            return Err(PipelineError::StageOrder {
                stage: "refine",
                expected: Stage::Initial,
            });
        }
        let prompt = self
            .prompts
            .refinement(&program.text, &strategy.as_advice(), &render_bundle(bundle))?;
        let response = self.backend.ask(prompt, Purpose::Refinement)?;
        Ok(parse::parse_advice(&response)?)
    }

    pub fn realize(
        &self,
        program: &IrProgram,
        strategy: &OptimizationStrategy,
        bundle: &AnalysisBundle,
    ) -> Result<GeneratedIr, PipelineError> {
        if strategy.stage != Stage::Refined {
            return Err(PipelineError::StageOrder {
                stage: "realize",
                expected: Stage::Refined,
            });
        }
        let prompt = self
            .prompts
            .realization(&program.text, &strategy.raw_text, &render_bundle(bundle))?;
        let response = self.backend.ask(prompt, Purpose::Realization)?;
        Ok(self.generated(program, parse::extract_code(&response)?))
    }

    /// Single-call end-to-end optimization with the baseline prompt.
    pub fn baseline(&self, program: &IrProgram) -> Result<GeneratedIr, PipelineError> {
        let prompt = self.prompts.baseline(&program.text)?;
        let response = self.backend.ask(prompt, Purpose::Baseline)?;
        Ok(self.generated(program, parse::extract_code(&response)?))
    }

    fn generated(&self, input: &IrProgram, code: String) -> GeneratedIr {
        let program = IrProgram::new(input.id.clone(), code, Origin::LlmGenerated);
        let validity = check_validity(&program, self.toolchain);
        if let IrValidity::Invalid(_) = validity {
            log::warn!("{}: generated IR fails the verifier", input.id);
        }
        GeneratedIr { program, validity }
    }

    /// Formulate, retrieve, collect analyses, refine, realize. The analysis
    /// bundle computed from the initial strategy is reused for realization.
    pub fn run(
        &self,
        program: &IrProgram,
        kb: &KnowledgeBase,
        index: &TfIdfIndex,
        name_map: &AnalysisNameMap,
        m: usize,
    ) -> Result<PipelineOutcome, PipelineError> {
        let initial = self.formulate(program)?;
        let (analyses, retrieval) = resolve_with_trace(&initial, index, kb, m)?;
        let bundle = if analyses.is_empty() {
            AnalysisBundle::empty(&program.id)
        } else {
            collect_analysis(program, &analyses, name_map, self.toolchain)?
        };
        let refined = self.refine(program, &initial, &bundle)?;
        let optimized = self.realize(program, &refined, &bundle)?;
        Ok(PipelineOutcome {
            initial,
            retrieval,
            analyses,
            bundle,
            refined,
            optimized,
        })
    }

    /// Infers the strategy behind an `-O3` pair and packages the training triple.
    pub fn distill(&self, pair: &IrPair, token_cap: usize) -> Result<DatasetTriple, PipelineError> {
        if pair.provenance != Provenance::CompilerO3 {
            return Err(PipelineError::NotO3Pair);
        }
        enforce_token_cap(pair, token_cap)?;
        let prompt = self.prompts.distillation(&pair.unopt.text, &pair.opt.text)?;
        let response = self.backend.ask(prompt, Purpose::Distillation)?;
        let strategy = parse::parse_steps(&response)?;
        Ok(DatasetTriple {
            unopt: pair.unopt.text.clone(),
            opt: pair.opt.text.clone(),
            strategy,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::CannedBackend;
    use crate::strategy::TransformationAction;

    fn prog() -> IrProgram {
        IrProgram::new("p", "define i32 @f(i32 %x) {\n  ret i32 %x\n}\n", Origin::Input)
    }

    fn no_tools() -> ToolchainConfig {
        ToolchainConfig {
            opt: Some("/nonexistent/opt".into()),
            ..Default::default()
        }
    }

    #[test]
    fn stage_order_enforced() {
        let backend = CannedBackend::new("c");
        let prompts = StagePromptSet::default();
        let tc = no_tools();
        let p = Pipeline::new(&backend, &prompts, &tc);
        let initial = OptimizationStrategy::initial(vec![TransformationAction::new("a", "b")], "");
        let mut refined = initial.clone();
        refined.stage = Stage::Refined;
        let b = AnalysisBundle::empty("p");
        assert!(matches!(p.realize(&prog(), &initial, &b), Err(PipelineError::StageOrder { .. })));
        assert!(matches!(p.refine(&prog(), &refined, &b), Err(PipelineError::StageOrder { .. })));
    }

    #[test]
    fn refine_with_empty_bundle_renders_empty_slot() {
        let backend = CannedBackend::new("c").respond_to("<analysis></analysis>", "<advice>\n- Do it\n</advice>");
        let prompts = StagePromptSet::default();
        let tc = no_tools();
        let p = Pipeline::new(&backend, &prompts, &tc);
        let initial = OptimizationStrategy::initial(vec![TransformationAction::new("a", "b")], "");
        let r = p.refine(&prog(), &initial, &AnalysisBundle::empty("p")).unwrap();
        assert_eq!(r.actions[0].transformation, "Do it");
    }

    #[test]
    fn realize_flags_unverifiable_ir() {
        let backend = CannedBackend::new("c").respond_to("full optimized", "<code>define garbage</code>");
        let prompts = StagePromptSet::default();
        let tc = no_tools();
        let p = Pipeline::new(&backend, &prompts, &tc);
        let mut s = OptimizationStrategy::initial(vec![TransformationAction::new("a", "b")], "- a");
        s.stage = Stage::Refined;
        let g = p.realize(&prog(), &s, &AnalysisBundle::empty("p")).unwrap();
        assert_eq!(g.program.text, "define garbage\n");
        assert_eq!(g.program.origin, Origin::LlmGenerated);
        assert!(matches!(g.validity, IrValidity::Unchecked(_)));
    }

    #[test]
    fn distill_preconditions() {
        let backend = CannedBackend::new("c").respond_to("<opt>", "<code><step>**Transformation**: x\n**Change**: y\n</step></code>");
        let prompts = StagePromptSet::default();
        let tc = no_tools();
        let p = Pipeline::new(&backend, &prompts, &tc);
        let pair = IrPair::new(prog(), prog(), Provenance::CompilerO3);
        assert!(matches!(p.distill(&pair, 1), Err(PipelineError::Ir(IrError::OverCap { .. }))));
        let llm_pair = IrPair::new(prog(), prog(), Provenance::LlmPipeline);
        assert!(matches!(p.distill(&llm_pair, 5000), Err(PipelineError::NotO3Pair)));
        let t = p.distill(&pair, 5000).unwrap();
        assert_eq!(t.strategy.actions.len(), 1);
        let line = serde_json::to_string(&t).unwrap();
        assert!(line.contains("\"unopt\"") && line.contains("\"strategy\""));
    }
}
