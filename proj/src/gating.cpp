#include "exitlab/gating.hpp"

#include <cmath>

#include "exitlab/errors.hpp"

namespace exitlab {

std::string to_string(GateFamily f) {
    switch (f) {
        case GateFamily::Confidence: return "confidence";
        case GateFamily::Entropy: return "entropy";
        case GateFamily::Patience: return "patience";
        case GateFamily::Ideal: return "ideal";
    }
    return "?";
}

GateFamily gate_family_from_string(const std::string& s) {
    if (s == "confidence") return GateFamily::Confidence;
    if (s == "entropy") return GateFamily::Entropy;
    if (s == "patience") return GateFamily::Patience;
    if (s == "ideal") return GateFamily::Ideal;
    throw ConfigError("unknown gate family: " + s);
}

void GateKind::validate() const {
    switch (family) {
        case GateFamily::Confidence:
            if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("confidence tau must be in (0,1]");
            break;
        case GateFamily::Entropy:
            if (!(tau >= 0.0)) throw ConfigError("entropy tau must be >= 0");
            break;
        case GateFamily::Patience:
            if (patience < 1) throw ConfigError("patience tau must be >= 1");
            break;
        case GateFamily::Ideal:
            break;
    }
}

bool confidence_gate(const std::vector<float>& dist, double tau) {
    return max_prob(dist) > tau;
}

double entropy(const std::vector<float>& dist) {
    double h = 0.0;
    for (float p : dist) {
        if (p > 0.0f) h -= static_cast<double>(p) * std::log(static_cast<double>(p));
    }
    return h;
}

bool entropy_gate(const std::vector<float>& dist, double tau) {
    return entropy(dist) < tau;
}

bool patience_gate(const GateState& state, int tau) {
    const auto& h = state.argmax_history;
    if (static_cast<int>(h.size()) < tau) return false;
    const int last = h.back();
    for (int i = 1; i < tau; ++i) {
        if (h[h.size() - 1 - static_cast<size_t>(i)] != last) return false;
    }
    return true;
}

int ideal_exit_layer(const std::vector<int>& per_layer_argmax) {
    const int n = static_cast<int>(per_layer_argmax.size());
    const int final_tok = per_layer_argmax[static_cast<size_t>(n - 1)];
    for (int l = 0; l < n; ++l) {
        if (per_layer_argmax[static_cast<size_t>(l)] == final_tok) return l + 1;
    }
    return n; // unreachable, the final layer always matches itself
}

int argmax_token(const std::vector<float>& dist) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(dist.size()); ++i) {
        if (dist[static_cast<size_t>(i)] > dist[static_cast<size_t>(best)]) best = i;
    }
    return best;
}

double max_prob(const std::vector<float>& dist) {
    float m = dist[0];
    for (float p : dist)
        if (p > m) m = p;
    return static_cast<double>(m);
}

} // namespace exitlab
