//===- DCE.cpp - Code to perform dead code elimination --------------------===//

#include "llvm/Transforms/Scalar/DCE.h"

using namespace llvm;

PreservedAnalyses DCEPass::run(Function &F, FunctionAnalysisManager &AM) {
  if (!eliminateDeadCode(F, &AM.getResult<TargetLibraryAnalysis>(F)))
    return PreservedAnalyses::all();

  PreservedAnalyses PA;
  PA.preserveSet<CFGAnalyses>();
  return PA;
}
