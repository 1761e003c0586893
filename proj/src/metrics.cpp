#include "t4d/metrics.hpp"

#include <sstream>

namespace t4d {

std::string MetricsReport::to_text() const {
    std::ostringstream os;
    os << "subjects: " << total() << "  accuracy: " << accuracy << "  f1: " << f1 << "\n"
       << "confusion: tp=" << tp << " fp=" << fp << " tn=" << tn << " fn=" << fn << "\n";
    for (const auto& s : subjects)
        os << "  " << s.subject << "  label=" << s.label << "  predicted=" << s.predicted
           << "  p1=" << s.p_positive << "  crops=" << s.crops << "\n";
    return os.str();
}

std::string MetricsReport::to_kv_lines(const std::string& prefix) const {
    std::ostringstream os;
    os << prefix << "accuracy=" << accuracy << "\n"
       << prefix << "f1=" << f1 << "\n"
       << prefix << "tp=" << tp << "\n"
       << prefix << "fp=" << fp << "\n"
       << prefix << "tn=" << tn << "\n"
       << prefix << "fn=" << fn << "\n";
    for (const auto& s : subjects)
        os << prefix << "subject." << s.subject << "=" << s.p_positive << "," << s.predicted << ","
           << s.label << "\n";
    return os.str();
}

MetricsReport f1_and_accuracy(const std::vector<int>& predictions,
                              const std::vector<int>& labels) {
    if (predictions.size() != labels.size())
        throw ShapeError("f1_and_accuracy: prediction/label lengths differ");
    MetricsReport r;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int label = labels[i];
        const int pred = predictions[i];
        if (label != 0 && label != 1) throw ShapeError("f1_and_accuracy: labels must be 0 or 1");
        if (pred != 0 && pred != 1) throw ShapeError("f1_and_accuracy: predictions must be 0 or 1");
        if (pred == 1 && label == 1) ++r.tp;
        else if (pred == 1 && label == 0) ++r.fp;
        else if (pred == 0 && label == 0) ++r.tn;
        else ++r.fn;
    }
    const int n = r.total();
    r.accuracy = n == 0 ? 0.0 : static_cast<double>(r.tp + r.tn) / static_cast<double>(n);
    const int denom = 2 * r.tp + r.fp + r.fn;
    r.f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(r.tp) / static_cast<double>(denom);
    return r;
}

}  // namespace t4d
