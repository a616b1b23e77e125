#pragma once

#include <catch2/catch_amalgamated.hpp>

#include "steerlab/error.hpp"

// asserts that an expression throws steerlab::Error with the given code
#define REQUIRE_ERR(expr, expected_code)                           \
    do {                                                           \
        bool caught_ = false;                                      \
        try {                                                      \
            (void)(expr);                                          \
        } catch (const steerlab::Error& e_) {                      \
            caught_ = true;                                        \
            REQUIRE(e_.code() == (expected_code));                 \
        }                                                          \
        REQUIRE(caught_);                                          \
    } while (0)
