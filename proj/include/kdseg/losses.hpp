#pragma once

#include "kdseg/labels.hpp"
#include "kdseg/tensor.hpp"

KDSEG_BEGIN_NAMESPACE

/// Weights of the distillation objective. alpha scales the probability loss,
/// beta the consistency loss, lambda the unlabeled-data branch.
struct LossWeights {
  double alpha = 4.0;
  double beta = 0.4;
  double lambda = 0.5;

  void validate() const;
};

/// Mean cross entropy over non-IGNORE pixels, computed from logits [B,n,H,W].
Var segmentation_loss(Var student_logits, const LabelMap& labels);

/// Squared L2 distance between per-pixel probability vectors, summed and
/// divided by B*H*W. The teacher side is treated as a constant.
Var probability_loss(Var p_student, Var p_teacher);

/// c(x) = sum over in-image 8-neighbours y of ||l(y) - l(x)||^2. Output [B,1,H,W].
Var consistency_map(Var logits);

/// Squared difference of student and teacher consistency maps, summed and
/// divided by B*H*W. The teacher side is treated as a constant.
Var consistency_loss(Var l_student, Var l_teacher);

/// alpha * probability_loss + beta * consistency_loss.
Var knowledge_bias(Var p_student, Var p_teacher, Var l_student, Var l_teacher, const LossWeights& w);

struct LossTerms {
  Var total;
  Var segmentation;
  Var probability;
  Var consistency;
};

/// L_S + alpha*L_p + beta*L_c for one batch. `teacher_logits` must not require
/// grad; the probabilities of both networks are derived here.
LossTerms total_loss_labeled(Var student_logits, Var teacher_logits, const LabelMap& labels,
                             const LossWeights& w);

/// labeled + lambda * unlabeled. Negative lambda is rejected.
Var total_loss_joint(Var labeled, Var unlabeled, double lambda);

KDSEG_END_NAMESPACE
