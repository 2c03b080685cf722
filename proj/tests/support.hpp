#pragma once

#include <functional>

#include <gtest/gtest.h>

#include "rvc/error.hpp"

// Fails unless fn throws an rvc::Error carrying `code`.
inline ::testing::AssertionResult throws_code(const std::function<void()>& fn, rvc::ErrorCode code) {
    try {
        fn();
    } catch (const rvc::Error& e) {
        if (e.code() == code) return ::testing::AssertionSuccess();
        return ::testing::AssertionFailure() << "threw " << rvc::to_string(e.code()) << " (" << e.what()
                                             << "), wanted " << rvc::to_string(code);
    }
    return ::testing::AssertionFailure() << "did not throw, wanted " << rvc::to_string(code);
}

#define EXPECT_CODE(stmt, code) EXPECT_TRUE(throws_code([&] { stmt; }, code))
