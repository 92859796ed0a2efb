import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // the e2e file boots a real server process
    testTimeout: 30_000,
    hookTimeout: 30_000,
  },
});
