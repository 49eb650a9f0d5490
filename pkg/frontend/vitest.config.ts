import { defineConfig } from "vitest/config";

// The service process is slow to boot on constrained machines; the
// integration suite shares one process but individual fits can take a
// while, so the timeouts are generous.
export default defineConfig({
  test: {
    testTimeout: 240_000,
    hookTimeout: 180_000,
  },
});
