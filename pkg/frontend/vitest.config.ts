import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    include: ["test/**/*.test.ts"],
    testTimeout: 20000,
    hookTimeout: 120000,
    // The walkthrough spawns one service process; keep files sequential so
    // unit tests never contend with it for the single CPU.
    fileParallelism: false,
  },
});
