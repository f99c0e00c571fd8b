#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vaemech/core/error.hpp"
#include "vaemech/core/tensor.hpp"

namespace vaemech {

/// Site name -> activation for one forward pass, kept in network order.
class ActivationTrace {
public:
    void set(std::string name, Tensor value) {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i] == name) {
                values_[i] = std::move(value);
                return;
            }
        }
        names_.push_back(std::move(name));
        values_.push_back(std::move(value));
    }

    bool contains(std::string_view name) const {
        for (const auto& n : names_) {
            if (n == name) return true;
        }
        return false;
    }

    const Tensor& at(std::string_view name) const {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i] == name) return values_[i];
        }
        throw ValidationError("activation trace has no site '" + std::string(name) + "'");
    }

    std::size_t size() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const Tensor& value(std::size_t i) const { return values_.at(i); }

    friend bool operator==(const ActivationTrace&, const ActivationTrace&) = default;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
};

}  // namespace vaemech
