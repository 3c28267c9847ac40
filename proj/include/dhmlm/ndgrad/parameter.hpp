#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dhmlm/ndgrad/tensor.hpp"

namespace dhmlm::ndgrad {

template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
};

/// Ordered named parameters. Index order is the serialization order.
template <class T>
class ParameterStore {
public:
    std::size_t add(std::string name, Tensor<T> value) {
        require(!contains(name), ErrorKind::InvalidArgument, "duplicate parameter " + name);
        Tensor<T> grad(value.shape());
        params_.push_back(Parameter<T>{std::move(name), std::move(value), std::move(grad)});
        return params_.size() - 1;
    }

    std::size_t size() const noexcept { return params_.size(); }
    Parameter<T>& operator[](std::size_t i) { return params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

    bool contains(const std::string& name) const {
        for (const auto& p : params_) {
            if (p.name == name) {
                return true;
            }
        }
        return false;
    }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (params_[i].name == name) {
                return i;
            }
        }
        fail(ErrorKind::NotFound, "no parameter named " + name);
    }

    Parameter<T>& get(const std::string& name) { return params_[index_of(name)]; }
    const Parameter<T>& get(const std::string& name) const { return params_[index_of(name)]; }

    void zero_grad() {
        for (auto& p : params_) {
            p.grad.fill(T(0));
        }
    }

    std::size_t num_elements() const {
        std::size_t n = 0;
        for (const auto& p : params_) {
            n += p.value.size();
        }
        return n;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<Parameter<T>> params_;
};

}  // namespace dhmlm::ndgrad
