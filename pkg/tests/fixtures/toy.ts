# two instances, two channels, length three
@problemName Toy
@timeStamps false
@missing false
@univariate false
@dimensions 2
@equalLength true
@seriesLength 3
@classLabel true A B
@data
1,2,3:4,5,6:A
0.5,-1.25,2e3:7,8,9:B
