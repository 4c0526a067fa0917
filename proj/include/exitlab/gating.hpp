#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace exitlab {

enum class GateFamily { Confidence, Entropy, Patience, Ideal };

std::string to_string(GateFamily f);
GateFamily gate_family_from_string(const std::string& s);

struct GateKind {
    GateFamily family = GateFamily::Confidence;
    double tau = 0.9;  // Confidence: probability in (0,1]; Entropy: nats >= 0
    int patience = 1;  // Patience: count >= 1

    void validate() const; // throws ConfigError
};

struct GateState {
    std::vector<int> argmax_history; // one entry per evaluated layer of the current token
    std::optional<int> last_decision;
};

// Exit iff max(dist) > tau (strict).
bool confidence_gate(const std::vector<float>& dist, double tau);

// -sum p ln p, natural log, 0 ln 0 = 0.
double entropy(const std::vector<float>& dist);

// Exit iff entropy(dist) < tau (strict).
bool entropy_gate(const std::vector<float>& dist, double tau);

// Exit iff the last tau recorded argmaxes exist and are identical.
bool patience_gate(const GateState& state, int tau);

// Smallest 1-based layer whose argmax equals the final layer's.
int ideal_exit_layer(const std::vector<int>& per_layer_argmax);

// Ties broken toward the lowest token id.
int argmax_token(const std::vector<float>& dist);

double max_prob(const std::vector<float>& dist);

} // namespace exitlab
