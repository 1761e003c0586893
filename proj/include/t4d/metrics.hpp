#pragma once

#include <string>
#include <vector>

#include "t4d/errors.hpp"

namespace t4d {

// Subject-level binary classification metrics; the positive class (label 1)
// is ASD. F1 = 2TP / (2TP + FP + FN), defined as 0 when that denominator is
// zero; accuracy = (TP + TN) / total.
struct MetricsReport {
    double accuracy = 0.0;
    double f1 = 0.0;
    int tp = 0, fp = 0, tn = 0, fn = 0;

    struct SubjectResult {
        std::string subject;
        int label = 0;
        int predicted = 0;
        double p_positive = 0.0;  // sliding-window mean probability
        int crops = 0;
    };
    std::vector<SubjectResult> subjects;  // filled by subject-level evaluation

    int total() const { return tp + fp + tn + fn; }
    std::string to_text() const;
    std::string to_kv_lines(const std::string& prefix) const;
};

// Computes confusion counts and the derived metrics from aligned prediction
// and label vectors.
MetricsReport f1_and_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

}  // namespace t4d
