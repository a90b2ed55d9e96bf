class Head(Module):
    @require
    def dir(self):
        return self.center == NORTH_SOUTH
    @handle([PROXIMITY_1,PROXIMITY_3])
    def proximity(self):
        Wheel.evade()
        self.sleepcs(25)

class Wheel(Module):
    @require
    def dir(self):
        return self.center == EAST_WEST
    @require
    def oneConnection(self):
        return len(self.connected(connected_dir)) == 1
    @behavior
    def move():
        self.TURN_CONTINUOUSLY(turn_dir)
    @command
    def evade():
        self.TURN_CONTINUOUSLY(evasion_dir)
        self.sleepcs(25)

class RightWheel(Wheel):
    def __init__(self):
        self.turn_dir = 150
        self.evasion_dir = -100
        self.connected_dir = EAST

class LeftWheel(Wheel):
    def __init__(self):
        turn_dir = -150
        evasion_dir = 100
        connected_dir = WEST
