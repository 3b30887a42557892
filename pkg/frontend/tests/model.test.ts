import { describe, expect, it } from "vitest";

import { ApiClient, TurnPayload } from "../src/api.js";
import { ChatViewModel } from "../src/model.js";
import recorded from "./fixtures/restaurant_payloads.json";

type Recorded = {
  created: { session_id: string; greeting?: string };
  turns: { utterance: string; response: TurnPayload }[];
};

const fixture = recorded as unknown as Recorded;

/** ApiClient stand-in that replays the recorded server payloads. */
function replayApi(opts: { failOnTurn?: number } = {}) {
  let turn = 0;
  let failArmed = opts.failOnTurn !== undefined;
  const api = {
    createSession: async () => fixture.created,
    takeTurn: async (_id: string, _utterance: string) => {
      if (failArmed && turn === opts.failOnTurn) {
        failArmed = false; // fail exactly once, then succeed on retry
        throw new Error("timeout");
      }
      const payload = fixture.turns[turn].response;
      turn += 1;
      return payload;
    },
    getSession: async () => {
      throw new Error("unused");
    },
  };
  return api as unknown as ApiClient;
}

describe("ChatViewModel", () => {
  it("start renders the greeting bubble", async () => {
    const vm = new ChatViewModel(replayApi());
    expect(await vm.start("restaurant")).toBe(true);
    expect(vm.status).toBe("ready");
    expect(vm.messages).toHaveLength(1);
    expect(vm.messages[0]).toMatchObject({
      speaker: "agent",
      text: fixture.created.greeting,
    });
  });

  it("connection failure surfaces an error status", async () => {
    const api = {
      createSession: async () => {
        throw new Error("service down");
      },
    } as unknown as ApiClient;
    const vm = new ChatViewModel(api);
    expect(await vm.start("restaurant")).toBe(false);
    expect(vm.status).toBe("error");
    expect(vm.statusDetail).toContain("service down");
  });

  it("keeps message order and one debug payload per agent turn", async () => {
    const vm = new ChatViewModel(replayApi());
    await vm.start("restaurant");
    for (const turn of fixture.turns) {
      expect(await vm.send(turn.utterance)).toBe(true);
    }
    const expected: string[] = [fixture.created.greeting as string];
    for (const turn of fixture.turns) {
      expected.push(turn.utterance, turn.response.reply);
    }
    expect(vm.messages.map((m) => m.text)).toEqual(expected);
    expect(vm.debug).toHaveLength(fixture.turns.length);
    // every displayed act string is the server's, verbatim
    fixture.turns.forEach((turn, i) => {
      expect(vm.debug[i].acts).toEqual(turn.response.acts);
    });
  });

  it("selects the newest turn and can select older ones", async () => {
    const vm = new ChatViewModel(replayApi());
    await vm.start("restaurant");
    await vm.send(fixture.turns[0].utterance);
    await vm.send(fixture.turns[1].utterance);
    expect(vm.selectedTurn).toBe(1);
    vm.selectTurn(0);
    expect(vm.selectedPayload?.acts).toEqual(fixture.turns[0].response.acts);
    vm.selectTurn(99); // out of range: ignored
    expect(vm.selectedTurn).toBe(0);
  });

  it("blocks a second send while one is in flight", async () => {
    let release: (payload: TurnPayload) => void = () => {};
    const api = {
      createSession: async () => fixture.created,
      takeTurn: () =>
        new Promise<TurnPayload>((resolve) => {
          release = resolve;
        }),
    } as unknown as ApiClient;
    const vm = new ChatViewModel(api);
    await vm.start("restaurant");
    const first = vm.send("first");
    expect(vm.inFlight).toBe(true);
    expect(vm.canSend).toBe(false);
    expect(await vm.send("second")).toBe(false); // gated, no duplicate user bubble
    expect(vm.messages.filter((m) => m.speaker === "user")).toHaveLength(1);
    release(fixture.turns[0].response);
    expect(await first).toBe(true);
    expect(vm.canSend).toBe(true);
  });

  it("empty input is not sent", async () => {
    const vm = new ChatViewModel(replayApi());
    await vm.start("restaurant");
    expect(await vm.send("   ")).toBe(false);
    expect(vm.messages.filter((m) => m.speaker === "user")).toHaveLength(0);
  });

  it("timeout leaves a retry affordance and never double-sends", async () => {
    const vm = new ChatViewModel(replayApi({ failOnTurn: 0 }));
    await vm.start("restaurant");
    expect(await vm.send(fixture.turns[0].utterance)).toBe(false);
    expect(vm.pendingRetry).toBe(fixture.turns[0].utterance);
    expect(vm.messages.filter((m) => m.speaker === "user")).toHaveLength(1);
    expect(await vm.retry()).toBe(true);
    expect(vm.pendingRetry).toBeNull();
    // still exactly one user bubble for the retried text
    expect(vm.messages.filter((m) => m.speaker === "user")).toHaveLength(1);
    expect(vm.debug).toHaveLength(1);
  });

  it("askTarget parses the AskField act of the selected turn", async () => {
    const vm = new ChatViewModel(replayApi());
    await vm.start("restaurant");
    await vm.send(fixture.turns[0].utterance);
    expect(vm.askTarget()).toEqual({ instance: "book_restaurant", field: "restaurant" });
  });
});
